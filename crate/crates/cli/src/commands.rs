use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use dipgd::certificates::{bound_series, certify as certify_init, Certificate, BOUNDS_HEADER};
use dipgd::experiments::{
    deblur_pipeline, desk_trial, divergence_thresholds, grid_certificate, grid_convergence, recovery_kv, spearman,
    ConvergenceGridSpec, DeblurConfig,
};
use dipgd::report::{fmt_f64, KvReport};
use dipgd::trainer::{gd_train, parse_trajectory_csv, trajectory_csv, TrainConfig};

use crate::config::RunConfig;
use crate::{CliError, Verdict};

/// Creates the output directory and echoes the effective config into it.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.path("out")?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.echo())?;
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> Result<Verdict, CliError> {
    let spec = cfg.desk()?;
    let trial = desk_trial(&spec, cfg.u64("seed")?)?;
    let loss = cfg.loss(trial.inst.y.clone())?;
    let (step, lipschitz) = (cfg.step()?, cfg.lipschitz()?);
    let cert = certify_init(&trial.net, &trial.theta0, &trial.inst, &loss, step, lipschitz)?;
    let tcfg = TrainConfig {
        step,
        lipschitz,
        max_steps: cfg.usize("steps")?,
        loss_stop: cfg.f64("loss_stop")?,
        divergence_factor: cfg.f64("divergence_factor")?,
        record_sigma_every: cfg.usize("record_sigma_every")?,
        ..Default::default()
    };
    let traj = gd_train(&trial.net, &trial.theta0, &trial.inst, &loss, &tcfg)?;

    let out = prepare_out(cfg)?;
    fs::write(out.join("trajectory.csv"), trajectory_csv(&traj))?;
    fs::write(out.join("certificate.txt"), cert.report().render())?;
    let bounds = if cert.holds {
        bound_series(&cert, &loss, traj.steps_run, None)?.csv()
    } else {
        eprintln!("warning: certificate does not hold (R' = {}, R = {}); bounds.csv has no rows", fmt_f64(cert.r_prime), fmt_f64(cert.r));
        format!("{BOUNDS_HEADER}\n")
    };
    fs::write(out.join("bounds.csv"), bounds)?;

    let mut summary = KvReport::new();
    summary.push("status", traj.status.name());
    summary.push("steps_run", traj.steps_run.to_string());
    summary.push_f64("gamma", traj.gamma_used);
    summary.push_f64("initial_loss", traj.records[0].loss);
    summary.push_f64("final_loss", traj.final_loss());
    summary.push("certificate_holds", cert.holds.to_string());
    print!("{}", summary.render());
    fs::write(out.join("summary.txt"), summary.render())?;
    Ok(if traj.diverged() { Verdict::Diverged } else { Verdict::Ok })
}

pub fn certify(cfg: &RunConfig) -> Result<Verdict, CliError> {
    let spec = cfg.desk()?;
    let trial = desk_trial(&spec, cfg.u64("seed")?)?;
    let loss = cfg.loss(trial.inst.y.clone())?;
    let cert = certify_init(&trial.net, &trial.theta0, &trial.inst, &loss, cfg.step()?, cfg.lipschitz()?)?;
    let text = cert.report().render();
    print!("{text}");
    let out = prepare_out(cfg)?;
    fs::write(out.join("certificate.txt"), &text)?;
    Ok(if cert.holds { Verdict::Ok } else { Verdict::NotCertified })
}

pub fn grid_bndr(cfg: &RunConfig) -> Result<Verdict, CliError> {
    let template = cfg.desk()?;
    let grid = grid_certificate(
        &cfg.list("m_list")?,
        &cfg.list("k_list")?,
        &template,
        cfg.usize("trials")?,
        cfg.u64("seed")?,
        cfg.lipschitz()?,
    )?;
    let out = prepare_out(cfg)?;
    let csv = grid.csv();
    fs::write(out.join("grid.csv"), &csv)?;
    print!("{csv}");
    Ok(Verdict::Ok)
}

pub fn grid_gamma(cfg: &RunConfig) -> Result<Verdict, CliError> {
    let spec = ConvergenceGridSpec {
        n_list: cfg.list("n_list")?,
        gamma_list: cfg.list("gamma_list")?,
        m_ratio: cfg.f64("m_ratio")?,
        steps: cfg.usize("steps")?,
        loss_stop: cfg.f64("loss_stop")?,
        trials: cfg.usize("trials")?,
        divergence_factor: cfg.f64("divergence_factor")?,
    };
    let grid = grid_convergence(&spec, &cfg.desk()?, cfg.u64("seed")?)?;
    let thresholds = divergence_thresholds(&grid);
    let out = prepare_out(cfg)?;
    fs::write(out.join("grid.csv"), grid.csv())?;
    fs::write(out.join("failures.csv"), grid.failure_csv())?;
    let mut th = String::from("n,gamma_star\n");
    for (n, g) in spec.n_list.iter().zip(&thresholds) {
        let _ = writeln!(th, "{n},{}", fmt_f64(*g));
    }
    fs::write(out.join("thresholds.csv"), &th)?;
    let ns: Vec<f64> = spec.n_list.iter().map(|&n| n as f64).collect();
    print!("{th}");
    println!("spearman = {}", fmt_f64(spearman(&ns, &thresholds)));
    Ok(Verdict::Ok)
}

pub fn deblur(cfg: &RunConfig) -> Result<Verdict, CliError> {
    let out = prepare_out(cfg)?;
    let dcfg = DeblurConfig {
        image: cfg.opt_path("image"),
        side: cfg.usize("side")?,
        operator: cfg.operator()?,
        noise_std: cfg.f64("noise_std")?,
        k: cfg.usize("k")?,
        d: cfg.usize("d")?,
        steps: cfg.usize("steps")?,
        step: cfg.step()?,
        lipschitz: cfg.lipschitz()?,
        activation: cfg.activation()?,
        mode: cfg.mode()?,
        seed: cfg.u64("seed")?,
        fit_steps: cfg.usize("fit_steps")?,
        out_dir: Some(out),
    };
    let rep = deblur_pipeline(&dcfg)?;
    print!("{}", recovery_kv(&rep).render());
    Ok(if rep.trajectory.diverged() { Verdict::Diverged } else { Verdict::Ok })
}

pub fn bounds(cfg: &RunConfig) -> Result<Verdict, CliError> {
    let read = |key: &str| -> Result<String, CliError> {
        let p = cfg.path(key)?;
        fs::read_to_string(&p).map_err(|e| CliError::Config(format!("cannot read {key} {}: {e}", p.display())))
    };
    let rows = parse_trajectory_csv(&read("trajectory")?)?;
    let cert = Certificate::parse(&read("certificate")?)?;
    if rows.is_empty() || rows.iter().enumerate().any(|(i, r)| r.step != i) {
        return Err(CliError::Config("trajectory steps must run 0, 1, 2, ... without gaps".into()));
    }
    if !cert.holds {
        return Ok(Verdict::NotCertified);
    }
    let loss = cfg.loss(Vec::new())?;
    let series = bound_series(&cert, &loss, rows.len() - 1, None)?;
    let out = prepare_out(cfg)?;
    fs::write(out.join("bounds.csv"), series.csv())?;
    println!("wrote {} bound rows", series.rows.len());
    Ok(Verdict::Ok)
}
