//! Convergence certificate quantities: discretization constants, the basin radii `R`
//! and `R'`, bound envelopes, the early-stopping iteration and the
//! overparametrization bound.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{conic_sigma_min, norm, norm_inf, psd_range_basis, DEFAULT_RANK_TOL};
use crate::losses::{KlEnvelope, LossModel};
use crate::network::{DipNetwork, ParamVector};
use crate::operators::{ForwardOperator, ProblemInstance};
use crate::report::{fmt_f64, fmt_opt, parse_f64, parse_kv, KvReport};
use crate::trainer::{estimate_lipschitz, gd_train, LipschitzRule, StepRule, TrainConfig, TrainStatus};

pub use crate::trainer::lip_jacobian_bound;

/// Relative tolerance under which `σmin(J₀)` counts as zero.
pub const SIGMA_J0_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuConstants {
    pub nu1: f64,
    pub nu2: f64,
    pub eta: f64,
}

/// `ν₁ = (1+γL)/(1-γL/2)`, `ν₂ = (1+γL)²/(γ-γ²L/2)`, `η = γ - Lγ²/2`.
pub fn nu_constants(gamma: f64, l: f64) -> Result<NuConstants> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Invalid(format!("Lipschitz constant {l} must be positive")));
    }
    if !(gamma > 0.0 && gamma * l <= 1.0 + 1e-12) {
        return Err(Error::Invalid(format!("step size {gamma} outside (0, 1/L] for L = {l}")));
    }
    let gl = gamma * l;
    let eta = gamma - l * gamma * gamma / 2.0;
    Ok(NuConstants {
        nu1: (1.0 + gl) / (1.0 - gl / 2.0),
        nu2: (1.0 + gl) * (1.0 + gl) / eta,
        eta,
    })
}

/// Radius `R` solving `R = σ_J0 / (2 Lip_{B(θ₀,R)}(J))`.
///
/// With both layers trained the Lipschitz bound grows with `R`, which gives
/// `2R² + (1+2D)R - σ_J0 √(k/n)/(2B) = 0`; with `V` fixed it is constant.
pub fn radius_r(sigma_j0: f64, net: &DipNetwork) -> f64 {
    if sigma_j0 <= 0.0 {
        return 0.0;
    }
    let b = net.activation().bound_b();
    if b == 0.0 {
        return f64::INFINITY;
    }
    let d = net.v_bound();
    let c = sigma_j0 * (net.k() as f64 / net.n() as f64).sqrt() / (2.0 * b);
    match net.mode() {
        crate::network::TrainMode::BothLayers => {
            let bb = 1.0 + 2.0 * d;
            // positive root of 2R² + bb R - c, written without cancellation
            2.0 * c / (bb + (bb * bb + 8.0 * c).sqrt())
        }
        crate::network::TrainMode::FixedV => c / d,
    }
}

/// `R' = 2 ν₁ ψ(ℒ₀) / (σ_A σ_J0)`.
pub fn radius_r_prime(loss: &LossModel, loss0: f64, sigma_a: f64, sigma_j0: f64, nu1: f64) -> Result<f64> {
    if !(sigma_a > 0.0 && sigma_j0 > 0.0) {
        return Err(Error::DegenerateInit);
    }
    Ok(2.0 * nu1 * loss.psi(loss0)? / (sigma_a * sigma_j0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub sigma_j0: f64,
    pub sigma_a: f64,
    pub norm_a: f64,
    pub loss0: f64,
    pub l_hat: f64,
    pub gamma: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub eta: f64,
    pub r: f64,
    pub r_prime: f64,
    pub holds: bool,
}

impl Certificate {
    pub fn report(&self) -> KvReport {
        let mut r = KvReport::new();
        r.push_f64("sigma_j0", self.sigma_j0);
        r.push_f64("sigma_a", self.sigma_a);
        r.push_f64("norm_a", self.norm_a);
        r.push_f64("loss0", self.loss0);
        r.push_f64("l_hat", self.l_hat);
        r.push_f64("gamma", self.gamma);
        r.push_f64("nu1", self.nu1);
        r.push_f64("nu2", self.nu2);
        r.push_f64("eta", self.eta);
        r.push_f64("r", self.r);
        r.push_f64("r_prime", self.r_prime);
        r.push("holds", self.holds.to_string());
        r
    }

    pub fn parse(text: &str) -> Result<Self> {
        let map: std::collections::BTreeMap<String, String> = parse_kv(text)?.into_iter().collect();
        let get = |k: &str| -> Result<f64> {
            parse_f64(map.get(k).ok_or_else(|| Error::Parse(format!("certificate report lacks '{k}'")))?)
        };
        let holds = match map.get("holds").map(String::as_str) {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(Error::Parse("certificate report lacks 'holds'".into())),
        };
        Ok(Self {
            sigma_j0: get("sigma_j0")?,
            sigma_a: get("sigma_a")?,
            norm_a: get("norm_a")?,
            loss0: get("loss0")?,
            l_hat: get("l_hat")?,
            gamma: get("gamma")?,
            nu1: get("nu1")?,
            nu2: get("nu2")?,
            eta: get("eta")?,
            r: get("r")?,
            r_prime: get("r_prime")?,
            holds,
        })
    }
}

/// Evaluates the initialization condition `σ_J0 > 0 ∧ R' < R`.
///
/// A step size beyond `1/L̂` leaves the ν-constants undefined; they are
/// reported as NaN and the certificate fails.
pub fn certify(
    net: &DipNetwork,
    theta0: &ParamVector,
    inst: &ProblemInstance,
    loss: &LossModel,
    step: StepRule,
    lipschitz: LipschitzRule,
) -> Result<Certificate> {
    let (smin, smax) = net.jacobian_sigma_range(theta0)?;
    let sigma_j0 = if smax > 0.0 && smin > SIGMA_J0_TOL * smax { smin } else { 0.0 };
    let sigma_a = inst.op.sigma_min();
    let norm_a = inst.op.sigma_max();
    let loss0 = loss.value(&inst.op.apply(&net.forward(theta0)?)?)?;
    let l_hat = estimate_lipschitz(net, theta0, &inst.op, loss, lipschitz)?.l_hat;
    let gamma = match step {
        StepRule::Fixed(g) => g,
        StepRule::Auto { fraction } => fraction / l_hat,
    };
    let (nu1, nu2, eta) = match nu_constants(gamma, l_hat) {
        Ok(c) => (c.nu1, c.nu2, c.eta),
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    };
    let r = radius_r(sigma_j0, net);
    let r_prime = if sigma_j0 > 0.0 && nu1.is_finite() {
        radius_r_prime(loss, loss0, sigma_a, sigma_j0, nu1)?
    } else if sigma_j0 > 0.0 {
        f64::NAN
    } else {
        f64::INFINITY
    };
    let holds = sigma_j0 > 0.0 && r_prime < r;
    Ok(Certificate {
        sigma_j0,
        sigma_a,
        norm_a,
        loss0,
        l_hat,
        gamma,
        nu1,
        nu2,
        eta,
        r,
        r_prime,
        holds,
    })
}

/// Inputs of the signal-space bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryInputs {
    pub lambda_min_conic: f64,
    pub dist_sigma: f64,
    pub noise_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub step: usize,
    pub xi: f64,
    pub loss_bound: f64,
    pub theta_bound: f64,
    pub x_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSeries {
    pub rows: Vec<BoundRow>,
    pub recovery: Option<RecoveryInputs>,
}

pub const BOUNDS_HEADER: &str = "step,xi,loss_bound,theta_bound,x_bound";

impl BoundSeries {
    pub fn csv(&self) -> String {
        let mut s = String::from(BOUNDS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.step,
                fmt_f64(r.xi),
                fmt_f64(r.loss_bound),
                fmt_f64(r.theta_bound),
                fmt_opt(r.x_bound)
            );
        }
        s
    }
}

/// Bound envelopes at `τ = 0..=steps`:
/// `ξ_τ = σ_A² σ_J0² τ / (4ν₂) + Ψ(ℒ₀)`, `ℒ_τ ≤ Ψ⁻¹(ξ_τ)`,
/// `|θ_τ - θ_∞| ≤ 2ν₁ ψ(Ψ⁻¹(ξ_τ)) / (σ_J0 σ_A)` and, with recovery inputs,
/// `|x_τ - x̄| ≤ ψ(Ψ⁻¹(ξ_τ))/λ + (1 + |A|/λ) dist + |ε|/λ`.
pub fn bound_series(
    cert: &Certificate,
    loss: &LossModel,
    steps: usize,
    recovery: Option<RecoveryInputs>,
) -> Result<BoundSeries> {
    bound_series_with_envelope(cert, loss, &loss.kl_envelope(), steps, recovery)
}

/// As [`bound_series`] with an explicit choice of primitive `Ψ`.
pub fn bound_series_with_envelope(
    cert: &Certificate,
    loss: &LossModel,
    env: &KlEnvelope,
    steps: usize,
    recovery: Option<RecoveryInputs>,
) -> Result<BoundSeries> {
    if !cert.holds {
        return Err(Error::CertificateRequired);
    }
    let rate = cert.sigma_a.powi(2) * cert.sigma_j0.powi(2) / (4.0 * cert.nu2);
    let xi0 = env.primitive(cert.loss0);
    let rows = (0..=steps)
        .map(|tau| {
            let xi = rate * tau as f64 + xi0;
            let lb = if tau == 0 { cert.loss0 } else { env.primitive_inv(xi) };
            let psi = loss.psi(lb)?;
            let theta_bound = 2.0 * cert.nu1 * psi / (cert.sigma_j0 * cert.sigma_a);
            let x_bound = recovery.map(|r| {
                let lam = r.lambda_min_conic;
                psi / lam + (1.0 + cert.norm_a / lam) * r.dist_sigma + r.noise_norm / lam
            });
            Ok(BoundRow {
                step: tau,
                xi,
                loss_bound: lb,
                theta_bound,
                x_bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundSeries { rows, recovery })
}

/// Real-valued `τ*` after which the bound guarantees `|y_τ - ȳ| ≤ 2|ε|`:
/// the first `τ` with `Ψ⁻¹(ξ_τ) ≤ ψ⁻¹(|ε|)`, i.e.
/// `τ* = 4ν₂ (Ψ(ψ⁻¹(|ε|)) - Ψ(ℒ₀)) / (σ_A² σ_J0²)`, clamped at 0.
pub fn early_stop_tau(cert: &Certificate, loss: &LossModel, noise_norm: f64) -> Result<f64> {
    if noise_norm <= 0.0 {
        return Err(Error::Noiseless);
    }
    if !cert.holds {
        return Err(Error::CertificateRequired);
    }
    let env = loss.kl_envelope();
    let target = env.primitive(loss.psi_inv(noise_norm)?);
    let rate = cert.sigma_a.powi(2) * cert.sigma_j0.powi(2) / (4.0 * cert.nu2);
    Ok(((target - env.primitive(cert.loss0)) / rate).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryEstimates {
    /// `λmin(A; range J(θ̂))`, the tangent-space surrogate of the conic
    /// singular value.
    pub lambda_min_conic: f64,
    /// `|g(u, θ̂) - x̄|` after the auxiliary fit; an upper estimate of the
    /// distance from `x̄` to the reachable set.
    pub dist_sigma: f64,
    pub fit_status: TrainStatus,
    pub theta_hat: ParamVector,
}

/// Fits the network to `x̄` (identity operator) from `theta_final` for
/// `fit_steps` steps and measures `A` on the Jacobian range at the result.
pub fn recovery_estimates(
    net: &DipNetwork,
    theta_final: &ParamVector,
    inst: &ProblemInstance,
    fit_steps: usize,
) -> Result<RecoveryEstimates> {
    let id = ForwardOperator::identity(net.n());
    let aux = ProblemInstance {
        op: id,
        x_true: inst.x_true.clone(),
        noise: vec![0.0; net.n()],
        y: inst.x_true.clone(),
        y_bar: inst.x_true.clone(),
    };
    let loss = LossModel::mse(inst.x_true.clone());
    let (theta_hat, status) = if fit_steps == 0 {
        (theta_final.clone(), TrainStatus::BudgetExhausted)
    } else {
        let cfg = TrainConfig {
            step: StepRule::Auto { fraction: 0.5 },
            max_steps: fit_steps,
            loss_stop: 0.0,
            ..Default::default()
        };
        let t = gd_train(net, theta_final, &aux, &loss, &cfg)?;
        if t.diverged() {
            return Err(Error::FitDiverged { residual: t.final_loss().sqrt() });
        }
        (t.theta_final, t.status)
    };
    let x_hat = net.forward(&theta_hat)?;
    let dist_sigma = crate::linalg::dist(&x_hat, &inst.x_true);
    let basis = psd_range_basis(&net.jacobian_gram(&theta_hat)?, DEFAULT_RANK_TOL)?;
    let lambda_min_conic = conic_sigma_min(inst.op.matrix(), &basis)?;
    Ok(RecoveryEstimates {
        lambda_min_conic,
        dist_sigma,
        fit_status: status,
        theta_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverparamBound {
    pub k_min: f64,
    /// `C |A| √(n ln d) + √m (|A x̄|_∞ + |ε|_∞)`
    pub init_err: f64,
    pub lambda0: f64,
}

/// Samples `sup |∇ℒ(v)| / |v - y|` over spheres around the target.
pub fn sample_lambda0(loss: &LossModel, radius: f64, samples: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let y = loss.target();
    let mut rng = crate::seeds::rng_from_seed(seed);
    let mut best: f64 = 0.0;
    for s in 0..samples.max(1) {
        let z: Vec<f64> = (0..y.len()).map(|_| rng.sample(StandardNormal)).collect();
        let nz = norm(&z);
        if nz == 0.0 {
            continue;
        }
        let scale = radius * (s + 1) as f64 / samples.max(1) as f64 / nz;
        let v: Vec<f64> = y.iter().zip(&z).map(|(a, b)| a + scale * b).collect();
        best = best.max(loss.gradient_ratio(&v)?);
    }
    Ok(best)
}

/// `k_min = C' σ_A⁻⁴ n ψ((Λ₀/2) init_err²)⁴`.
pub fn overparam_bound(
    loss: &LossModel,
    op: &ForwardOperator,
    inst: &ProblemInstance,
    d: usize,
    c: f64,
    c_prime: f64,
) -> Result<OverparamBound> {
    if d < 2 {
        return Err(Error::Invalid(format!("input dimension d = {d} must be at least 2")));
    }
    if !(c > 0.0 && c_prime > 0.0) {
        return Err(Error::Invalid("constants C and C' must be positive".into()));
    }
    let (m, n) = (op.m() as f64, op.n() as f64);
    let init_err = c * op.sigma_max() * (n * (d as f64).ln()).sqrt()
        + m.sqrt() * (norm_inf(&inst.y_bar) + norm_inf(&inst.noise));
    let lambda0 = sample_lambda0(loss, init_err.max(1.0), 256, 0)?;
    let k_min = c_prime * op.sigma_min().powi(-4) * n * loss.psi(lambda0 / 2.0 * init_err * init_err)?.powi(4);
    Ok(OverparamBound { k_min, init_err, lambda0 })
}
