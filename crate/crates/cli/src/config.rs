//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dipgd::experiments::{DeskSpec, SignalModel};
use dipgd::losses::{LossKind, LossModel};
use dipgd::network::{Activation, TrainMode};
use dipgd::operators::OperatorKind;
use dipgd::report::{parse_kv, KvReport};
use dipgd::trainer::{LipschitzRule, StepRule, DEFAULT_JACOBIAN_C0};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Certify,
    GridBndr,
    GridGamma,
    Deblur,
    Bounds,
}

impl Command {
    fn required(&self) -> &'static [&'static str] {
        match self {
            Command::Train | Command::Certify => &["n", "m", "k"],
            Command::Bounds => &["trajectory", "certificate"],
            _ => &[],
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("n", "signal dimension"),
    ("m", "number of observations"),
    ("d", "network input dimension"),
    ("k", "hidden width"),
    ("operator", "gaussian | crafted | blur | identity"),
    ("op_lo", "smallest singular value of the crafted operator"),
    ("op_hi", "largest singular value of the crafted operator"),
    ("blur_sigma", "Gaussian blur width in pixels"),
    ("activation", "sigmoid | tanh"),
    ("mode", "both | fixed_v"),
    ("loss", "mse | lojasiewicz"),
    ("loss_c", "desingularizer scale c"),
    ("loss_alpha", "desingularizer exponent alpha"),
    ("signal", "near_init | gaussian"),
    ("signal_scale", "signal perturbation scale"),
    ("noise_std", "observation noise standard deviation"),
    ("gamma", "auto | fixed step size"),
    ("step_fraction", "gamma = step_fraction / L when gamma = auto"),
    ("lipschitz", "jacobian | width | explicit constant"),
    ("lipschitz_c0", "constant factor of the Lipschitz estimate"),
    ("steps", "maximum number of gradient steps"),
    ("loss_stop", "stop once the loss falls below this"),
    ("divergence_factor", "diverged once loss exceeds this multiple of the initial loss"),
    ("record_sigma_every", "record sigma_min(J) every this many steps (0 = never)"),
    ("seed", "master seed"),
    ("out", "output directory"),
    ("threads", "worker threads for grids (0 = all cores)"),
    ("trials", "trials per grid cell"),
    ("m_list", "comma-separated m values"),
    ("k_list", "comma-separated k values"),
    ("n_list", "comma-separated n values"),
    ("gamma_list", "comma-separated step sizes"),
    ("m_ratio", "m = ceil(m_ratio * n) in the step-size grid"),
    ("image", "PGM image path (default: built-in test image)"),
    ("side", "side of the square crop"),
    ("fit_steps", "steps of the auxiliary fit for recovery estimates"),
    ("trajectory", "trajectory CSV path"),
    ("certificate", "certificate report path"),
];

fn defaults(cmd: Command) -> Vec<(&'static str, String)> {
    let mut d: Vec<(&str, String)> = vec![
        ("d", "10".into()),
        ("operator", "crafted".into()),
        ("op_lo", "1".into()),
        ("op_hi", "2".into()),
        ("blur_sigma", "1".into()),
        ("activation", "sigmoid".into()),
        ("mode", "both".into()),
        ("loss", "mse".into()),
        ("loss_c", "1".into()),
        ("loss_alpha", "0.5".into()),
        ("signal", "near_init".into()),
        ("signal_scale", "0.1".into()),
        ("noise_std", "0".into()),
        ("gamma", "auto".into()),
        ("step_fraction", "0.5".into()),
        ("lipschitz", "jacobian".into()),
        ("steps", "1000".into()),
        ("loss_stop", "1e-14".into()),
        ("divergence_factor", "1e6".into()),
        ("record_sigma_every", "0".into()),
        ("seed", "0".into()),
        ("out", "out".into()),
        ("threads", "0".into()),
    ];
    let mut set = |key: &'static str, value: &str| {
        match d.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value.into(),
            None => d.push((key, value.into())),
        }
    };
    match cmd {
        Command::GridBndr => {
            set("n", "5");
            set("mode", "fixed_v");
            set("operator", "gaussian");
            set("trials", "50");
            set("m_list", "1,2,3,4,5");
            set("k_list", "16,32,64,128,256,512,1024,2048,4096");
        }
        Command::GridGamma => {
            set("k", "4096");
            set("operator", "gaussian");
            set("signal", "gaussian");
            set("signal_scale", "1");
            set("trials", "4");
            set("n_list", "5,10,20,40");
            set("gamma_list", "0.01,0.01778,0.03162,0.05623,0.1,0.1778,0.3162,0.5623,1");
            set("m_ratio", "0.6");
            set("steps", "200");
            set("loss_stop", "1e-4");
            set("divergence_factor", "1");
        }
        Command::Deblur => {
            set("operator", "blur");
            set("k", "2048");
            set("d", "32");
            set("side", "16");
            set("steps", "2000");
            set("fit_steps", "0");
        }
        _ => {}
    }
    d
}

/// Effective settings: defaults for the subcommand overlaid with the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(cmd: Command, text: &str) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            defaults(cmd).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (key, value) in parse_kv(text).map_err(|e| CliError::Config(e.to_string()))? {
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(CliError::Config(format!("unknown config key '{key}'")));
            }
            values.insert(key, value);
        }
        for key in cmd.required() {
            if !values.contains_key(*key) {
                return Err(CliError::Config(format!("missing required key '{key}'")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(cmd: Command, path: Option<&Path>) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(cmd, &text)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    /// The effective configuration in the file format it was read from.
    pub fn echo(&self) -> String {
        let mut r = KvReport::new();
        for (k, v) in &self.values {
            r.push(k, v.clone());
        }
        r.render()
    }

    fn raw(&self, key: &str) -> Result<&str, CliError> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Config(format!("missing required key '{key}'")))
    }

    fn typed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key)?;
        raw.trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad value '{raw}' for key '{key}'")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.typed(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.typed(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.typed(key)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        Ok(PathBuf::from(self.raw(key)?))
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let raw = self.raw(key)?;
        let out: Vec<T> = raw
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| CliError::Config(format!("bad entry '{s}' in list '{key}'"))))
            .collect::<Result<_, _>>()?;
        if out.is_empty() {
            return Err(CliError::Config(format!("list '{key}' is empty")));
        }
        Ok(out)
    }

    fn parsed<T: std::str::FromStr<Err = dipgd::Error>>(&self, key: &str) -> Result<T, CliError> {
        self.raw(key)?
            .parse()
            .map_err(|e: dipgd::Error| CliError::Config(format!("key '{key}': {e}")))
    }

    pub fn activation(&self) -> Result<Activation, CliError> {
        self.parsed("activation")
    }

    pub fn mode(&self) -> Result<TrainMode, CliError> {
        self.parsed("mode")
    }

    pub fn operator(&self) -> Result<OperatorKind, CliError> {
        match self.raw("operator")? {
            "gaussian" => Ok(OperatorKind::Gaussian),
            "crafted" => Ok(OperatorKind::Crafted { lo: self.f64("op_lo")?, hi: self.f64("op_hi")? }),
            "blur" => Ok(OperatorKind::Blur { sigma: self.f64("blur_sigma")? }),
            "identity" => Ok(OperatorKind::Identity),
            other => Err(CliError::Config(format!("unknown operator '{other}'"))),
        }
    }

    pub fn signal(&self) -> Result<SignalModel, CliError> {
        let scale = self.f64("signal_scale")?;
        match self.raw("signal")? {
            "near_init" => Ok(SignalModel::NearInit { scale }),
            "gaussian" => Ok(SignalModel::Gaussian { scale }),
            other => Err(CliError::Config(format!("unknown signal model '{other}'"))),
        }
    }

    pub fn loss_kind(&self) -> Result<LossKind, CliError> {
        match self.raw("loss")? {
            "mse" => Ok(LossKind::Mse),
            "lojasiewicz" => Ok(LossKind::Lojasiewicz { c: self.f64("loss_c")?, alpha: self.f64("loss_alpha")? }),
            other => Err(CliError::Config(format!("unknown loss '{other}'"))),
        }
    }

    pub fn loss(&self, target: Vec<f64>) -> Result<LossModel, CliError> {
        LossModel::new(self.loss_kind()?, target).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn step(&self) -> Result<StepRule, CliError> {
        match self.raw("gamma")? {
            "auto" => Ok(StepRule::Auto { fraction: self.f64("step_fraction")? }),
            _ => Ok(StepRule::Fixed(self.f64("gamma")?)),
        }
    }

    pub fn lipschitz(&self) -> Result<LipschitzRule, CliError> {
        let c0 = if self.values.contains_key("lipschitz_c0") { Some(self.f64("lipschitz_c0")?) } else { None };
        match self.raw("lipschitz")? {
            "jacobian" => Ok(LipschitzRule::JacobianNorm { c0: c0.unwrap_or(DEFAULT_JACOBIAN_C0) }),
            "width" => Ok(LipschitzRule::WidthScaled { c0 }),
            _ => Ok(LipschitzRule::Explicit(self.f64("lipschitz")?)),
        }
    }

    /// The synthetic-problem description; `n`, `m` and `k` fall back to the
    /// library defaults when absent (grids override them per cell).
    pub fn desk(&self) -> Result<DeskSpec, CliError> {
        let base = DeskSpec::default();
        let or = |key: &str, fallback: usize| -> Result<usize, CliError> {
            if self.values.contains_key(key) { self.usize(key) } else { Ok(fallback) }
        };
        Ok(DeskSpec {
            n: or("n", base.n)?,
            m: or("m", base.m)?,
            d: self.usize("d")?,
            k: or("k", base.k)?,
            activation: self.activation()?,
            mode: self.mode()?,
            operator: self.operator()?,
            signal: self.signal()?,
            noise_std: self.f64("noise_std")?,
        })
    }
}
