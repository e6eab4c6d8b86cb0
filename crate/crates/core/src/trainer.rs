//! Fixed-step gradient descent `θ ← θ - γ ∇_θ ℒ(A g(u, θ))` with
//! per-step instrumentation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{dist, norm, sub};
use crate::losses::LossModel;
use crate::network::{DipNetwork, ParamVector, TrainMode};
use crate::operators::{ForwardOperator, ProblemInstance};
use crate::report::{fmt_f64, fmt_opt, parse_f64};

/// Default safety factor of [`LipschitzRule::JacobianNorm`].
pub const DEFAULT_JACOBIAN_C0: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// `γ = fraction / L̂`.
    Auto { fraction: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Auto { fraction: 0.5 }
    }
}

/// How `L̂`, the Lipschitz constant of `θ ↦ ∇_θ ℒ`, is estimated at `θ₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LipschitzRule {
    /// `c₀ (|A|² n/k + |A| |y - y₀| √(n/k))`. `c₀ = None` picks
    /// `4 B² max(D², sup φ²)`. In `FixedV` mode the second term uses the
    /// global Jacobian Lipschitz constant `B D √(n/k)` instead.
    WidthScaled { c0: Option<f64> },
    /// `c₀ (2 |A|² |J₀|² + 2 |A| |y - y₀| Lip_J)`: the Hessian norm bound
    /// of the squared loss at `θ₀` with the measured Jacobian norm.
    JacobianNorm { c0: f64 },
    /// A user-supplied constant; the only option for non-MSE losses.
    Explicit(f64),
}

impl Default for LipschitzRule {
    fn default() -> Self {
        LipschitzRule::JacobianNorm { c0: DEFAULT_JACOBIAN_C0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub l_hat: f64,
    /// The part that does not depend on the initial residual.
    pub curvature_term: f64,
    /// The part proportional to `|y - y₀|`.
    pub residual_term: f64,
}

/// `4 B² max(D², sup φ²)`.
pub fn width_scaled_c0(net: &DipNetwork) -> f64 {
    let b = net.activation().bound_b();
    let d = net.v_bound();
    let s = net.activation().sup_abs();
    4.0 * b * b * (d * d).max(s * s)
}

/// Jacobian Lipschitz bound on the ball of radius `rho` around any point
/// with `|V|_∞ ≤ D`.
pub fn lip_jacobian_bound(net: &DipNetwork, rho: f64) -> f64 {
    let b = net.activation().bound_b();
    let d = net.v_bound();
    let ratio = (net.n() as f64 / net.k() as f64).sqrt();
    match net.mode() {
        TrainMode::BothLayers => b * (1.0 + 2.0 * (d + rho)) * ratio,
        TrainMode::FixedV => b * d * ratio,
    }
}

pub fn estimate_lipschitz(
    net: &DipNetwork,
    theta0: &ParamVector,
    op: &ForwardOperator,
    loss: &LossModel,
    rule: LipschitzRule,
) -> Result<LipschitzEstimate> {
    if let LipschitzRule::Explicit(l) = rule {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Invalid(format!("Lipschitz constant {l} must be positive")));
        }
        return Ok(LipschitzEstimate {
            l_hat: l,
            curvature_term: l,
            residual_term: 0.0,
        });
    }
    if !loss.is_mse() {
        return Err(Error::NoLipschitzEstimate);
    }
    let y0 = op.apply(&net.forward(theta0)?)?;
    let resid = dist(&y0, loss.target());
    let na = op.sigma_max();
    let ratio = net.n() as f64 / net.k() as f64;
    let (curv, res) = match rule {
        LipschitzRule::WidthScaled { c0 } => {
            let c0 = c0.unwrap_or_else(|| width_scaled_c0(net));
            let curv = c0 * na * na * ratio;
            let res = match net.mode() {
                TrainMode::BothLayers => c0 * na * resid * ratio.sqrt(),
                TrainMode::FixedV => 2.0 * na * resid * lip_jacobian_bound(net, 0.0),
            };
            (curv, res)
        }
        LipschitzRule::JacobianNorm { c0 } => {
            let (_, jmax) = net.jacobian_sigma_range(theta0)?;
            let curv = c0 * 2.0 * na * na * jmax * jmax;
            let res = c0 * 2.0 * na * resid * lip_jacobian_bound(net, 0.0);
            (curv, res)
        }
        LipschitzRule::Explicit(_) => unreachable!(),
    };
    let l_hat = curv + res;
    if !(l_hat > 0.0 && l_hat.is_finite()) {
        return Err(Error::Invalid(format!("degenerate Lipschitz estimate {l_hat}")));
    }
    Ok(LipschitzEstimate {
        l_hat,
        curvature_term: curv,
        residual_term: res,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub step: StepRule,
    pub lipschitz: LipschitzRule,
    pub max_steps: usize,
    pub loss_stop: f64,
    /// Record `σmin(J_τ)` every this many steps; 0 disables.
    pub record_sigma_every: usize,
    /// Record `|g_τ - g_{τ-1}| / |θ_τ - θ_{τ-1}|` at every step.
    pub curvature_probe: bool,
    /// Loss above `divergence_factor · ℒ₀` counts as divergence.
    pub divergence_factor: f64,
    /// When set, `|θ_τ - θ_ref|` is recorded at every step.
    pub reference_theta: Option<ParamVector>,
    /// Steps at which the network output `x_τ` is kept.
    pub snapshot_steps: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step: StepRule::default(),
            lipschitz: LipschitzRule::default(),
            max_steps: 1000,
            loss_stop: 1e-14,
            record_sigma_every: 0,
            curvature_probe: false,
            divergence_factor: 1e6,
            reference_theta: None,
            snapshot_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Converged,
    BudgetExhausted,
    Diverged,
}

impl TrainStatus {
    pub fn name(&self) -> &'static str {
        match self {
            TrainStatus::Converged => "converged",
            TrainStatus::BudgetExhausted => "budget_exhausted",
            TrainStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub theta_dist: f64,
    pub sigma_min_j: Option<f64>,
    /// `|x_τ - x̄|`
    pub signal_err: f64,
    /// `|A x_τ - ȳ|`
    pub clean_residual: f64,
    pub ref_dist: Option<f64>,
    pub curvature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrajectory {
    pub records: Vec<StepRecord>,
    pub theta_final: ParamVector,
    pub x_final: Vec<f64>,
    pub y_final: Vec<f64>,
    pub steps_run: usize,
    pub gamma_used: f64,
    pub l_hat: Option<f64>,
    /// On divergence `theta_final` is the first rejected iterate while
    /// `x_final`/`y_final` belong to the last accepted one.
    pub status: TrainStatus,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl TrainTrajectory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map(|r| r.loss).unwrap_or(f64::NAN)
    }

    pub fn diverged(&self) -> bool {
        self.status == TrainStatus::Diverged
    }

    pub fn max_curvature(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.curvature).reduce(f64::max)
    }
}

/// Runs gradient descent from `theta0`. Divergence is reported through
/// [`TrainStatus::Diverged`], not as an error.
pub fn gd_train(
    net: &DipNetwork,
    theta0: &ParamVector,
    inst: &ProblemInstance,
    loss: &LossModel,
    cfg: &TrainConfig,
) -> Result<TrainTrajectory> {
    if loss.target().len() != inst.op.m() || inst.op.n() != net.n() {
        return Err(Error::Dimension(format!(
            "network n={}, operator {}x{}, target length {}",
            net.n(),
            inst.op.m(),
            inst.op.n(),
            loss.target().len()
        )));
    }
    if cfg.max_steps == 0 {
        return Err(Error::Invalid("max_steps must be at least 1".into()));
    }
    let (gamma, l_hat) = match cfg.step {
        StepRule::Fixed(g) => {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Invalid(format!("step size {g} must be nonnegative")));
            }
            let l = match cfg.lipschitz {
                LipschitzRule::Explicit(l) => Some(l),
                rule if loss.is_mse() => estimate_lipschitz(net, theta0, &inst.op, loss, rule).ok().map(|e| e.l_hat),
                _ => None,
            };
            (g, l)
        }
        StepRule::Auto { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Invalid(format!("auto step fraction {fraction} must lie in (0, 1]")));
            }
            let est = estimate_lipschitz(net, theta0, &inst.op, loss, cfg.lipschitz)?;
            (fraction / est.l_hat, Some(est.l_hat))
        }
    };

    let mode = net.mode();
    let mut theta = theta0.clone();
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut loss0 = f64::NAN;
    let mut status = TrainStatus::BudgetExhausted;
    let mut last_x = Vec::new();
    let mut last_y = Vec::new();
    let mut steps_run = 0;

    for tau in 0..=cfg.max_steps {
        let x = net.forward(&theta)?;
        let yv = inst.op.apply(&x)?;
        let l = loss.value(&yv)?;
        if tau == 0 {
            loss0 = l;
            if !l.is_finite() {
                return Err(Error::NonFinite("initial loss"));
            }
        } else if !l.is_finite() || l > cfg.divergence_factor * loss0 {
            status = TrainStatus::Diverged;
            break;
        }
        let r = inst.op.apply_transpose(&loss.grad(&yv)?)?;
        let g = net.vjp(&theta, &r)?;
        let flat = theta.flatten(mode);
        let curvature = if cfg.curvature_probe {
            prev.as_ref().and_then(|(pg, pt)| {
                let dt = dist(&flat, pt);
                (dt > 0.0).then(|| dist(&g, pg) / dt)
            })
        } else {
            None
        };
        let sigma_min_j = if cfg.record_sigma_every > 0 && tau % cfg.record_sigma_every == 0 {
            Some(net.sigma_min_j(&theta)?)
        } else {
            None
        };
        records.push(StepRecord {
            step: tau,
            loss: l,
            grad_norm: norm(&g),
            theta_dist: theta.dist(theta0, mode),
            sigma_min_j,
            signal_err: dist(&x, &inst.x_true),
            clean_residual: dist(&yv, &inst.y_bar),
            ref_dist: cfg.reference_theta.as_ref().map(|t| theta.dist(t, mode)),
            curvature,
        });
        if cfg.snapshot_steps.contains(&tau) {
            snapshots.push((tau, x.clone()));
        }
        steps_run = tau;
        last_x = x;
        last_y = yv;
        if l <= cfg.loss_stop {
            status = TrainStatus::Converged;
            break;
        }
        if tau == cfg.max_steps {
            break;
        }
        theta.axpy_in_place(mode, gamma, &g);
        if cfg.curvature_probe {
            prev = Some((g, flat));
        }
    }

    Ok(TrainTrajectory {
        records,
        theta_final: theta,
        x_final: last_x,
        y_final: last_y,
        steps_run,
        gamma_used: gamma,
        l_hat,
        status,
        snapshots,
    })
}

/// `ℒ_{τ+1} - ℒ_τ + η |∇_θ ℒ_τ|²` with `η = γ - L̂ γ²/2`.
pub fn descent_residuals(traj: &TrainTrajectory, l_hat: f64, gamma: f64) -> Vec<f64> {
    let eta = gamma - l_hat * gamma * gamma / 2.0;
    traj.records
        .windows(2)
        .map(|w| w[1].loss - w[0].loss + eta * w[0].grad_norm * w[0].grad_norm)
        .collect()
}

/// `|θ_τ - θ₀| ≤ γ Σ_{s<τ} |∇_θ ℒ_s|` per step, as `(lhs, rhs)` pairs.
pub fn path_length_bounds(traj: &TrainTrajectory) -> Vec<(f64, f64)> {
    let mut acc = 0.0;
    traj.records
        .iter()
        .map(|r| {
            let out = (r.theta_dist, acc);
            acc += traj.gamma_used * r.grad_norm;
            out
        })
        .collect()
}

pub const TRAJECTORY_HEADER: &str = "step,loss,grad_norm,theta_dist,sigma_min_j";

pub fn trajectory_csv(traj: &TrainTrajectory) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for r in &traj.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.step,
            fmt_f64(r.loss),
            fmt_f64(r.grad_norm),
            fmt_f64(r.theta_dist),
            fmt_opt(r.sigma_min_j)
        );
    }
    s
}

/// One parsed row of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub theta_dist: f64,
    pub sigma_min_j: Option<f64>,
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRAJECTORY_HEADER => {}
        _ => return Err(Error::Parse(format!("trajectory CSV must start with '{TRAJECTORY_HEADER}'"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("expected 5 fields in '{l}'")));
            }
            let step = f[0].trim().parse().map_err(|_| Error::Parse(format!("bad step '{}'", f[0])))?;
            let sigma = parse_f64(f[4])?;
            Ok(TrajectoryRow {
                step,
                loss: parse_f64(f[1])?,
                grad_norm: parse_f64(f[2])?,
                theta_dist: parse_f64(f[3])?,
                sigma_min_j: (!sigma.is_nan()).then_some(sigma),
            })
        })
        .collect()
}

/// `∇_y ℒ`, `Aᵀ ∇_y ℒ` and `∇_θ ℒ` at `θ`.
pub fn gradient_chain(
    net: &DipNetwork,
    theta: &ParamVector,
    op: &ForwardOperator,
    loss: &LossModel,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let yv = op.apply(&net.forward(theta)?)?;
    let gy = loss.grad(&yv)?;
    let gx = op.apply_transpose(&gy)?;
    let gt = net.vjp(theta, &gx)?;
    Ok((gy, gx, gt))
}

/// `y - y₀` at initialization.
pub fn initial_residual(net: &DipNetwork, theta0: &ParamVector, op: &ForwardOperator, y: &[f64]) -> Result<Vec<f64>> {
    Ok(sub(y, &op.apply(&net.forward(theta0)?)?))
}
