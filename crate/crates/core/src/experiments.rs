//! Seeded Monte-Carlo grids and the image recovery pipeline.
//!
//! Every trial draws its randomness from `mix_seed(master, indices)`, so a
//! cell's outcome does not depend on evaluation order or thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::certificates::{
    bound_series, certify, early_stop_tau, recovery_estimates, BoundSeries, Certificate, RecoveryInputs,
};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::losses::LossModel;
use crate::network::{init_network, Activation, DipNetwork, ParamVector, TrainMode};
use crate::operators::{make_instance, OperatorKind, ProblemInstance};
use crate::pgm::{read_pgm, synthetic_test_image, write_pgm, GrayImage};
use crate::report::{fmt_f64, KvReport};
use crate::seeds::{mix_seed, rng_from_seed};
use crate::trainer::{gd_train, trajectory_csv, LipschitzRule, StepRule, TrainConfig, TrainStatus, TrainTrajectory};

/// How the ground-truth signal `x̄` of a synthetic trial is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalModel {
    /// `x̄ = scale · z`, `z ~ N(0, I)`.
    Gaussian { scale: f64 },
    /// `x̄ = g(u, θ₀) + scale · z`: a target close to the network output at
    /// initialization, so that the initial loss is controlled.
    NearInit { scale: f64 },
}

impl SignalModel {
    pub fn draw(&self, net: &DipNetwork, theta0: &ParamVector, seed: u64) -> Result<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        let z: Vec<f64> = (0..net.n()).map(|_| rng.sample(StandardNormal)).collect();
        match *self {
            SignalModel::Gaussian { scale } => Ok(z.into_iter().map(|v| scale * v).collect()),
            SignalModel::NearInit { scale } => {
                let x0 = net.forward(theta0)?;
                Ok(x0.iter().zip(&z).map(|(a, b)| a + scale * b).collect())
            }
        }
    }
}

/// A synthetic problem: network shape, operator family and signal law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub activation: Activation,
    pub mode: TrainMode,
    pub operator: OperatorKind,
    pub signal: SignalModel,
    pub noise_std: f64,
}

impl Default for DeskSpec {
    fn default() -> Self {
        Self {
            n: 5,
            m: 3,
            d: 10,
            k: 2048,
            activation: Activation::Sigmoid,
            mode: TrainMode::BothLayers,
            operator: OperatorKind::Crafted { lo: 1.0, hi: 2.0 },
            signal: SignalModel::NearInit { scale: 0.1 },
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskTrial {
    pub net: DipNetwork,
    pub theta0: ParamVector,
    pub inst: ProblemInstance,
    pub loss: LossModel,
}

/// Draws network, operator, signal and noise from four derived streams.
pub fn desk_trial(spec: &DeskSpec, seed: u64) -> Result<DeskTrial> {
    let (net, theta0) = init_network(spec.d, spec.k, spec.n, spec.activation, spec.mode, mix_seed(seed, &[0]))?;
    let op = spec.operator.build(spec.m, spec.n, mix_seed(seed, &[1]))?;
    let x = spec.signal.draw(&net, &theta0, mix_seed(seed, &[2]))?;
    let inst = make_instance(&op, x, spec.noise_std, mix_seed(seed, &[3]))?;
    let loss = LossModel::mse(inst.y.clone());
    Ok(DeskTrial { net, theta0, inst, loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GridCell {
    pub trials: usize,
    pub successes: usize,
    pub diverged: usize,
    pub exhausted: usize,
}

impl GridCell {
    pub fn probability(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// `cells[i][j]` belongs to `(axis1[i], axis2[j])`.
    pub cells: Vec<Vec<GridCell>>,
}

pub const GRID_HEADER: &str = "axis1,axis2,trials,successes,probability";

impl GridResult {
    pub fn cell(&self, i: usize, j: usize) -> &GridCell {
        &self.cells[i][j]
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(GRID_HEADER);
        s.push('\n');
        for (i, a) in self.axis1.iter().enumerate() {
            for (j, b) in self.axis2.iter().enumerate() {
                let c = &self.cells[i][j];
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    fmt_f64(*a),
                    fmt_f64(*b),
                    c.trials,
                    c.successes,
                    fmt_f64(c.probability())
                );
            }
        }
        s
    }

    /// Per-cell failure breakdown: `axis1,axis2,diverged,budget_exhausted`.
    pub fn failure_csv(&self) -> String {
        let mut s = String::from("axis1,axis2,diverged,budget_exhausted\n");
        for (i, a) in self.axis1.iter().enumerate() {
            for (j, b) in self.axis2.iter().enumerate() {
                let c = &self.cells[i][j];
                let _ = writeln!(s, "{},{},{},{}", fmt_f64(*a), fmt_f64(*b), c.diverged, c.exhausted);
            }
        }
        s
    }
}

#[derive(Clone, Copy)]
enum Outcome {
    Success,
    Diverged,
    Exhausted,
}

fn run_grid(
    axis1: Vec<f64>,
    axis2: Vec<f64>,
    trials: usize,
    f: impl Fn(usize, usize, usize) -> Result<Outcome> + Sync,
) -> Result<GridResult> {
    if trials == 0 {
        return Err(Error::Invalid("trials must be at least 1".into()));
    }
    let (n1, n2) = (axis1.len(), axis2.len());
    let outcomes: Vec<Outcome> = (0..n1 * n2 * trials)
        .into_par_iter()
        .map(|idx| f(idx / (n2 * trials), (idx / trials) % n2, idx % trials))
        .collect::<Result<_>>()?;
    let mut cells = vec![vec![GridCell::default(); n2]; n1];
    for (idx, o) in outcomes.into_iter().enumerate() {
        let c = &mut cells[idx / (n2 * trials)][(idx / trials) % n2];
        c.trials += 1;
        match o {
            Outcome::Success => c.successes += 1,
            Outcome::Diverged => c.diverged += 1,
            Outcome::Exhausted => c.exhausted += 1,
        }
    }
    Ok(GridResult { axis1, axis2, cells })
}

/// Probability that the initialization certificate holds over `(m, k)`.
/// `template.m` and `template.k` are overridden by the axes.
pub fn grid_certificate(
    m_list: &[usize],
    k_list: &[usize],
    template: &DeskSpec,
    trials: usize,
    master_seed: u64,
    lipschitz: LipschitzRule,
) -> Result<GridResult> {
    let axis1 = m_list.iter().map(|&m| m as f64).collect();
    let axis2 = k_list.iter().map(|&k| k as f64).collect();
    run_grid(axis1, axis2, trials, |i, j, t| {
        let spec = DeskSpec {
            m: m_list[i],
            k: k_list[j],
            ..*template
        };
        let tr = desk_trial(&spec, mix_seed(master_seed, &[i as u64, j as u64, t as u64]))?;
        let c = certify(&tr.net, &tr.theta0, &tr.inst, &tr.loss, StepRule::default(), lipschitz)?;
        Ok(if c.holds { Outcome::Success } else { Outcome::Exhausted })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceGridSpec {
    pub n_list: Vec<usize>,
    pub gamma_list: Vec<f64>,
    /// `m = ⌈m_ratio · n⌉`
    pub m_ratio: f64,
    pub steps: usize,
    pub loss_stop: f64,
    pub trials: usize,
    /// A run counts as diverged once its loss exceeds this multiple of
    /// `ℒ₀`. Bounded activations saturate instead of blowing up, so an
    /// unstable step shows as a loss rising above its start long before
    /// it reaches the trainer's default `10⁶ ℒ₀`.
    pub divergence_factor: f64,
}

/// Success probability of plain training over `(n, γ)`; failures are split
/// into divergence and budget exhaustion.
pub fn grid_convergence(spec: &ConvergenceGridSpec, template: &DeskSpec, master_seed: u64) -> Result<GridResult> {
    let axis1 = spec.n_list.iter().map(|&n| n as f64).collect();
    run_grid(axis1, spec.gamma_list.clone(), spec.trials, |i, j, t| {
        let n = spec.n_list[i];
        let m = ((spec.m_ratio * n as f64).ceil() as usize).clamp(1, usize::MAX);
        let desk = DeskSpec { n, m, ..*template };
        let tr = desk_trial(&desk, mix_seed(master_seed, &[i as u64, j as u64, t as u64]))?;
        let cfg = TrainConfig {
            step: StepRule::Fixed(spec.gamma_list[j]),
            max_steps: spec.steps,
            loss_stop: spec.loss_stop,
            divergence_factor: spec.divergence_factor,
            ..Default::default()
        };
        let traj = gd_train(&tr.net, &tr.theta0, &tr.inst, &tr.loss, &cfg)?;
        Ok(match traj.status {
            TrainStatus::Converged => Outcome::Success,
            TrainStatus::Diverged => Outcome::Diverged,
            TrainStatus::BudgetExhausted => Outcome::Exhausted,
        })
    })
}

/// For each `axis1` row, the smallest `axis2` value at which more than half
/// of the trials diverged; `+∞` when none did.
pub fn divergence_thresholds(grid: &GridResult) -> Vec<f64> {
    grid.cells
        .iter()
        .map(|row| {
            row.iter()
                .zip(&grid.axis2)
                .find(|(c, _)| 2 * c.diverged > c.trials)
                .map(|(_, g)| *g)
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        f64::NAN
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// `0, 1, 2, 4, …` up to `steps`, plus `steps` itself.
pub fn log_checkpoints(steps: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut s = 1;
    while s < steps {
        out.push(s);
        s *= 2;
    }
    if steps > 0 {
        out.push(steps);
    }
    out
}

/// Peak signal-to-noise ratio on the `[0, 255]` scale.
pub fn psnr(x: &[f64], reference: &[f64]) -> f64 {
    let mse = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeblurConfig {
    /// `None` uses the built-in synthetic test image.
    pub image: Option<PathBuf>,
    /// Side of the top-left crop.
    pub side: usize,
    pub operator: OperatorKind,
    /// Noise standard deviation in pixel units (`[0, 255]` scale).
    pub noise_std: f64,
    pub k: usize,
    pub d: usize,
    pub steps: usize,
    pub step: StepRule,
    pub lipschitz: LipschitzRule,
    pub activation: Activation,
    pub mode: TrainMode,
    pub seed: u64,
    /// Iterations of the auxiliary fit behind the recovery estimates; 0
    /// skips them.
    pub fit_steps: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        Self {
            image: None,
            side: 16,
            operator: OperatorKind::Blur { sigma: 1.0 },
            noise_std: 0.0,
            k: 2048,
            d: 32,
            steps: 2000,
            step: StepRule::default(),
            lipschitz: LipschitzRule::default(),
            activation: Activation::Sigmoid,
            mode: TrainMode::BothLayers,
            seed: 0,
            fit_steps: 0,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryReport {
    /// `|x_τ - x̄|` per recorded step, in normalized units.
    pub signal_errors: Vec<f64>,
    /// `|A x_τ - y|` per recorded step.
    pub obs_residuals: Vec<f64>,
    /// `|A x_τ - ȳ|` per recorded step.
    pub clean_residuals: Vec<f64>,
    pub certificate: Certificate,
    pub bounds: Option<BoundSeries>,
    pub early_stop_tau: Option<f64>,
    pub lambda_min_conic: Option<f64>,
    pub dist_sigma: Option<f64>,
    pub final_relative_error: f64,
    pub final_psnr: f64,
    pub min_error_step: usize,
    pub noise_norm: f64,
    pub x_true_norm: f64,
    pub y_norm: f64,
    pub trajectory: TrainTrajectory,
    pub files: Vec<PathBuf>,
}

/// Loads (or synthesizes) the image, blurs or mixes it, adds noise,
/// trains and compares the trajectory with the bounds. Pixels are divided
/// by 255 before training and multiplied back for PSNR and snapshots.
pub fn deblur_pipeline(cfg: &DeblurConfig) -> Result<RecoveryReport> {
    let img = match &cfg.image {
        Some(p) => read_pgm(p)?,
        None => synthetic_test_image(cfg.side),
    };
    let img = img.crop(cfg.side)?;
    let n = cfg.side * cfg.side;
    let x_true: Vec<f64> = img.pixels.iter().map(|p| p / 255.0).collect();
    let op = cfg.operator.build(n, n, mix_seed(cfg.seed, &[1]))?;
    let inst = make_instance(&op, x_true, cfg.noise_std / 255.0, mix_seed(cfg.seed, &[3]))?;
    let (net, theta0) = init_network(cfg.d, cfg.k, n, cfg.activation, cfg.mode, mix_seed(cfg.seed, &[0]))?;
    let loss = LossModel::mse(inst.y.clone());
    let cert = certify(&net, &theta0, &inst, &loss, cfg.step, cfg.lipschitz)?;

    let checkpoints = log_checkpoints(cfg.steps);
    let tcfg = TrainConfig {
        step: cfg.step,
        lipschitz: cfg.lipschitz,
        max_steps: cfg.steps,
        loss_stop: 0.0,
        snapshot_steps: checkpoints,
        ..Default::default()
    };
    let traj = gd_train(&net, &theta0, &inst, &loss, &tcfg)?;
    let signal_errors: Vec<f64> = traj.records.iter().map(|r| r.signal_err).collect();
    let obs_residuals: Vec<f64> = traj.records.iter().map(|r| r.loss.sqrt()).collect();
    let clean_residuals: Vec<f64> = traj.records.iter().map(|r| r.clean_residual).collect();
    let min_error_step = signal_errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| traj.records[i].step)
        .unwrap_or(0);

    let noise_norm = inst.noise_norm();
    let (mut lambda_min_conic, mut dist_sigma, mut bounds, mut tau_star) = (None, None, None, None);
    if cert.holds {
        let rec = if cfg.fit_steps > 0 {
            let r = recovery_estimates(&net, &traj.theta_final, &inst, cfg.fit_steps)?;
            lambda_min_conic = Some(r.lambda_min_conic);
            dist_sigma = Some(r.dist_sigma);
            (r.lambda_min_conic > 0.0).then_some(RecoveryInputs {
                lambda_min_conic: r.lambda_min_conic,
                dist_sigma: r.dist_sigma,
                noise_norm,
            })
        } else {
            None
        };
        bounds = Some(bound_series(&cert, &loss, traj.steps_run, rec)?);
        if noise_norm > 0.0 {
            tau_star = Some(early_stop_tau(&cert, &loss, noise_norm)?);
        }
    }

    let scaled = |v: &[f64]| v.iter().map(|p| p * 255.0).collect::<Vec<f64>>();
    let final_psnr = psnr(&scaled(&traj.x_final), &img.pixels);
    let x_true_norm = norm(&inst.x_true);
    let report = RecoveryReport {
        final_relative_error: crate::linalg::dist(&traj.x_final, &inst.x_true) / x_true_norm,
        signal_errors,
        obs_residuals,
        clean_residuals,
        certificate: cert,
        bounds,
        early_stop_tau: tau_star,
        lambda_min_conic,
        dist_sigma,
        final_psnr,
        min_error_step,
        noise_norm,
        x_true_norm,
        y_norm: norm(&inst.y),
        trajectory: traj,
        files: Vec::new(),
    };
    match &cfg.out_dir {
        Some(dir) => write_recovery_outputs(report, dir, cfg.side),
        None => Ok(report),
    }
}

fn write_recovery_outputs(mut rep: RecoveryReport, dir: &Path, side: usize) -> Result<RecoveryReport> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut snaps = rep.trajectory.snapshots.clone();
    if !snaps.iter().any(|(s, _)| *s == rep.trajectory.steps_run) {
        snaps.push((rep.trajectory.steps_run, rep.trajectory.x_final.clone()));
    }
    for (step, x) in &snaps {
        let img = GrayImage::new(side, side, x.iter().map(|p| p * 255.0).collect())?;
        let name = format!("step_{step}.pgm");
        write_pgm(&dir.join(&name), &img)?;
        files.push(PathBuf::from(name));
    }
    let mut put = |name: &str, text: String| -> Result<()> {
        fs::write(dir.join(name), text)?;
        files.push(PathBuf::from(name));
        Ok(())
    };
    put("trajectory.csv", trajectory_csv(&rep.trajectory))?;
    let mut rec = String::from("step,signal_err,obs_residual,clean_residual\n");
    for (i, r) in rep.trajectory.records.iter().enumerate() {
        let _ = writeln!(
            rec,
            "{},{},{},{}",
            r.step,
            fmt_f64(rep.signal_errors[i]),
            fmt_f64(rep.obs_residuals[i]),
            fmt_f64(rep.clean_residuals[i])
        );
    }
    put("recovery.csv", rec)?;
    if let Some(b) = &rep.bounds {
        put("bounds.csv", b.csv())?;
    }
    put("certificate.txt", rep.certificate.report().render())?;
    put("report.txt", recovery_kv(&rep).render())?;
    let manifest: String = files.iter().map(|f| format!("{}\n", f.display())).collect();
    fs::write(dir.join("manifest.txt"), manifest)?;
    rep.files = files;
    Ok(rep)
}

pub fn recovery_kv(rep: &RecoveryReport) -> KvReport {
    let mut r = KvReport::new();
    r.push("status", rep.trajectory.status.name());
    r.push("steps_run", rep.trajectory.steps_run.to_string());
    r.push_f64("gamma", rep.trajectory.gamma_used);
    r.push_f64("final_loss", rep.trajectory.final_loss());
    r.push_f64("final_relative_error", rep.final_relative_error);
    r.push_f64("final_psnr", rep.final_psnr);
    r.push("min_error_step", rep.min_error_step.to_string());
    r.push_f64("noise_norm", rep.noise_norm);
    r.push("certificate_holds", rep.certificate.holds.to_string());
    r.push("early_stop_tau", rep.early_stop_tau.map(fmt_f64).unwrap_or_else(|| "nan".into()));
    r.push(
        "lambda_min_conic_estimated",
        rep.lambda_min_conic.map(fmt_f64).unwrap_or_else(|| "nan".into()),
    );
    r.push("dist_sigma_estimated", rep.dist_sigma.map(fmt_f64).unwrap_or_else(|| "nan".into()));
    r
}
