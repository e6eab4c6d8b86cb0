use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{Command, RunConfig};

/// Train deep inverse prior networks by gradient descent and check their
/// convergence certificates.
///
/// Exit status: 0 ok, 1 configuration or input error, 2 training diverged,
/// 3 the initialization certificate does not hold.
#[derive(Parser, Debug)]
#[command(name = "dipgd", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `out` key
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one seeded synthetic instance; writes trajectory, certificate and bounds
    Train,
    /// Evaluate the initialization certificate and print it
    Certify,
    /// Certificate probability over the (m, k) grid
    GridBndr,
    /// Convergence and divergence over the (n, gamma) grid
    GridGamma,
    /// Deblurring (or crafted-operator) recovery of a PGM image
    Deblur,
    /// Bound envelope aligned with a saved trajectory and certificate
    Bounds,
    /// List the accepted config keys
    Keys,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(dipgd::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<dipgd::Error> for CliError {
    fn from(e: dipgd::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

/// What a successful invocation reports back to the shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Diverged,
    NotCertified,
}

fn run(cli: Cli) -> Result<Verdict, CliError> {
    let cmd = match cli.command {
        Cmd::Train => Command::Train,
        Cmd::Certify => Command::Certify,
        Cmd::GridBndr => Command::GridBndr,
        Cmd::GridGamma => Command::GridGamma,
        Cmd::Deblur => Command::Deblur,
        Cmd::Bounds => Command::Bounds,
        Cmd::Keys => {
            for (k, help) in config::KEYS {
                println!("{k:<20} {help}");
            }
            return Ok(Verdict::Ok);
        }
    };
    let mut cfg = RunConfig::load(cmd, cli.global.config.as_deref())?;
    if let Some(s) = cli.global.seed {
        cfg.set("seed", s.to_string());
    }
    if let Some(o) = cli.global.out {
        cfg.set("out", o.display().to_string());
    }
    let threads = cfg.usize("threads")?;
    if threads > 0 {
        // only fails if a pool was already installed
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cmd {
        Command::Train => commands::train(&cfg),
        Command::Certify => commands::certify(&cfg),
        Command::GridBndr => commands::grid_bndr(&cfg),
        Command::GridGamma => commands::grid_gamma(&cfg),
        Command::Deblur => commands::deblur(&cfg),
        Command::Bounds => commands::bounds(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Verdict::Ok) => ExitCode::SUCCESS,
        Ok(Verdict::Diverged) => {
            eprintln!("training diverged");
            ExitCode::from(2)
        }
        Ok(Verdict::NotCertified) => {
            eprintln!("certificate does not hold");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
