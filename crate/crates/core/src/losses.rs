//! Loss models on the observation space and their KL data.
//!
//! Every model uses the squared Euclidean misfit `|v - y|²` (no ½ factor) as
//! its objective. What differs is the desingularizing function `ψ` used in
//! the bounds: plain MSE uses `ψ(s) = √s`, for which the KL inequality
//! `ψ'(ℒ(v)) |∇ℒ(v)| ≥ 1` holds with equality everywhere off the minimizer;
//! the Łojasiewicz family `ψ(s) = c s^α` lets callers audit other constants.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    Lojasiewicz { c: f64, alpha: f64 },
}

/// `ψ(s) = c s^α`. Plain MSE is `c = 1, α = ½`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Desingularizer {
    c: f64,
    alpha: f64,
}

impl Desingularizer {
    pub const MSE: Desingularizer = Desingularizer { c: 1.0, alpha: 0.5 };

    pub fn new(c: f64, alpha: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Invalid(format!("Łojasiewicz constant c = {c} must be positive")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Invalid(format!("Łojasiewicz exponent α = {alpha} must lie in (0, 1]")));
        }
        Ok(Self { c, alpha })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn psi(&self, s: f64) -> Result<f64> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::Domain(format!("ψ evaluated at s = {s}")));
        }
        Ok(if self.alpha == 0.5 {
            self.c * s.sqrt()
        } else {
            self.c * s.powf(self.alpha)
        })
    }

    pub fn psi_prime(&self, s: f64) -> Result<f64> {
        if s <= 0.0 || s.is_nan() {
            return Err(Error::Domain(format!("ψ' evaluated at s = {s}")));
        }
        Ok(if self.alpha == 0.5 {
            0.5 * self.c / s.sqrt()
        } else {
            self.c * self.alpha * s.powf(self.alpha - 1.0)
        })
    }

    pub fn psi_inv(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::Domain(format!("ψ⁻¹ evaluated at r = {r}")));
        }
        let q = r / self.c;
        Ok(if self.alpha == 0.5 {
            q * q
        } else {
            q.powf(1.0 / self.alpha)
        })
    }

    /// The rate envelope generated by this `ψ`, with integration constant 0.
    pub fn envelope(&self) -> KlEnvelope {
        KlEnvelope {
            c: self.c,
            alpha: self.alpha,
            offset: 0.0,
        }
    }
}

/// `Ψ`, a primitive of `-(ψ')²`, and its inverse.
///
/// For `α = ½`: `Ψ(s) = -(c²/4) ln s`. Otherwise
/// `Ψ(s) = -c²α² s^(2α-1) / (2α-1)`. An additive `offset` selects another
/// primitive; all bounds built from differences of `Ψ` ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEnvelope {
    c: f64,
    alpha: f64,
    offset: f64,
}

impl KlEnvelope {
    pub fn with_offset(self, offset: f64) -> Self {
        Self { offset, ..self }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `Ψ(s)` for `s > 0`.
    pub fn primitive(&self, s: f64) -> f64 {
        let c2 = self.c * self.c;
        if self.alpha == 0.5 {
            -0.25 * c2 * s.ln() + self.offset
        } else {
            let e = 2.0 * self.alpha - 1.0;
            -c2 * self.alpha * self.alpha * s.powf(e) / e + self.offset
        }
    }

    /// `Ψ⁻¹(t)`. Where `Ψ` never reaches `t` the limit value is returned:
    /// 0 past the finite-time horizon (`α > ½`), `+∞` before the start
    /// (`α < ½`).
    pub fn primitive_inv(&self, t: f64) -> f64 {
        let t = t - self.offset;
        let c2 = self.c * self.c;
        if self.alpha == 0.5 {
            (-4.0 * t / c2).exp()
        } else {
            let e = 2.0 * self.alpha - 1.0;
            let base = -t * e / (c2 * self.alpha * self.alpha);
            if base <= 0.0 {
                if e > 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                base.powf(1.0 / e)
            }
        }
    }
}

/// A loss `ℒ_y` with its target observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    kind: LossKind,
    target: Vec<f64>,
    desing: Desingularizer,
}

impl LossModel {
    pub fn mse(target: Vec<f64>) -> Self {
        Self {
            kind: LossKind::Mse,
            target,
            desing: Desingularizer::MSE,
        }
    }

    pub fn lojasiewicz(target: Vec<f64>, c: f64, alpha: f64) -> Result<Self> {
        Ok(Self {
            kind: LossKind::Lojasiewicz { c, alpha },
            target,
            desing: Desingularizer::new(c, alpha)?,
        })
    }

    pub fn new(kind: LossKind, target: Vec<f64>) -> Result<Self> {
        match kind {
            LossKind::Mse => Ok(Self::mse(target)),
            LossKind::Lojasiewicz { c, alpha } => Self::lojasiewicz(target, c, alpha),
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn is_mse(&self) -> bool {
        self.kind == LossKind::Mse
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn desingularizer(&self) -> Desingularizer {
        self.desing
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.target.len() {
            return Err(Error::Dimension(format!(
                "loss expects length {}, got {}",
                self.target.len(),
                v.len()
            )));
        }
        Ok(())
    }

    /// `|v - y|²`
    pub fn value(&self, v: &[f64]) -> Result<f64> {
        self.check(v)?;
        Ok(v.iter()
            .zip(&self.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// `2 (v - y)`
    pub fn grad(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(v.iter()
            .zip(&self.target)
            .map(|(a, b)| 2.0 * (a - b))
            .collect())
    }

    pub fn psi(&self, s: f64) -> Result<f64> {
        self.desing.psi(s)
    }

    pub fn psi_prime(&self, s: f64) -> Result<f64> {
        self.desing.psi_prime(s)
    }

    pub fn psi_inv(&self, r: f64) -> Result<f64> {
        self.desing.psi_inv(r)
    }

    pub fn kl_envelope(&self) -> KlEnvelope {
        self.desing.envelope()
    }

    /// `ψ'(ℒ(v)) |∇ℒ(v)|`; at least 1 wherever the KL inequality holds.
    pub fn kl_residual(&self, v: &[f64]) -> Result<f64> {
        let l = self.value(v)?;
        if l == 0.0 {
            return Err(Error::AtMinimizer);
        }
        let g = self.grad(v)?;
        Ok(self.psi_prime(l)? * norm(&g))
    }

    /// `|∇ℒ(v)| / |v - y|` at a point other than the target.
    pub fn gradient_ratio(&self, v: &[f64]) -> Result<f64> {
        let g = self.grad(v)?;
        let r: Vec<f64> = v.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let nr = dot(&r, &r).sqrt();
        if nr == 0.0 {
            return Err(Error::AtMinimizer);
        }
        Ok(norm(&g) / nr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        step(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn value_and_gradient_by_formula() {
        let l = LossModel::mse(vec![0.0, 0.0]);
        assert_eq!(l.value(&[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(l.grad(&[1.0, -2.0]).unwrap(), vec![2.0, -4.0]);
        let y = vec![1.5, -0.5, 2.0];
        let m = LossModel::mse(y.clone());
        assert_eq!(m.value(&y).unwrap(), 0.0);
        assert!(m.grad(&y).unwrap().iter().all(|&g| g == 0.0));
        assert!(m.value(&[1.0]).is_err());
        assert!(m.grad(&[1.0]).is_err());
    }

    #[test]
    fn psi_values() {
        let l = LossModel::mse(vec![0.0]);
        assert_eq!(l.psi(4.0).unwrap(), 2.0);
        assert_eq!(l.psi_prime(4.0).unwrap(), 0.25);
        assert_eq!(l.psi_inv(3.0).unwrap(), 9.0);
        assert!(l.psi(-1.0).is_err());
        assert!(l.psi_prime(0.0).is_err());
        let lj = LossModel::lojasiewicz(vec![0.0], 2.0, 0.5).unwrap();
        assert_eq!(lj.psi(9.0).unwrap(), 6.0);
        assert!(LossModel::lojasiewicz(vec![0.0], 1.0, 1.5).is_err());
        assert!(LossModel::lojasiewicz(vec![0.0], 0.0, 0.5).is_err());
    }

    #[test]
    fn mse_envelope_pair() {
        let env = Desingularizer::MSE.envelope();
        assert_eq!(env.primitive(1.0), 0.0);
        assert_eq!(env.primitive_inv(0.0), 1.0);
        for s in [1e-6, 0.5, 1.0, 37.0] {
            let back = env.primitive_inv(env.primitive(s));
            assert!(((back - s) / s).abs() < 1e-10, "{s} -> {back}");
        }
    }

    #[test]
    fn lojasiewicz_primitive_matches_quadrature() {
        let d = Desingularizer::new(1.0, 0.3).unwrap();
        let env = d.envelope();
        let sq = |t: f64| d.psi_prime(t).unwrap().powi(2);
        for s in [0.05, 0.4, 1.0, 2.5, 9.0] {
            // Ψ(s) = Ψ(1) + ∫_s^1 (ψ')² dt
            let integral = if s < 1.0 {
                adaptive_simpson(&sq, s, 1.0, 1e-12)
            } else {
                -adaptive_simpson(&sq, 1.0, s, 1e-12)
            };
            let expected = env.primitive(1.0) + integral;
            assert!((env.primitive(s) - expected).abs() < 1e-6, "s = {s}");
        }
    }

    #[test]
    fn lojasiewicz_inverse_branches() {
        for alpha in [0.3, 0.5, 0.8, 1.0] {
            let env = Desingularizer::new(1.7, alpha).unwrap().envelope();
            for s in [1e-8, 1e-3, 0.7, 12.0, 1e4] {
                let back = env.primitive_inv(env.primitive(s));
                assert!(((back - s) / s).abs() < 1e-10, "α={alpha}, s={s}: {back}");
            }
        }
        // α > ½ reaches zero loss in finite time
        let fast = Desingularizer::new(1.0, 0.8).unwrap().envelope();
        assert_eq!(fast.primitive_inv(0.1), 0.0);
        let slow = Desingularizer::new(1.0, 0.3).unwrap().envelope();
        assert_eq!(slow.primitive_inv(-0.1), f64::INFINITY);
    }

    #[test]
    fn kl_residuals() {
        let y = vec![0.3, -1.0, 2.0];
        let v = vec![1.0, 0.0, 0.0];
        let mse = LossModel::mse(y.clone());
        assert!((mse.kl_residual(&v).unwrap() - 1.0).abs() < 1e-12);
        let same = LossModel::lojasiewicz(y.clone(), 1.0, 0.5).unwrap();
        assert!((same.kl_residual(&v).unwrap() - 1.0).abs() < 1e-12);
        let weak = LossModel::lojasiewicz(y.clone(), 0.1, 0.5).unwrap();
        assert!((weak.kl_residual(&v).unwrap() - 0.1).abs() < 1e-12);
        let err = mse.kl_residual(&y).unwrap_err();
        assert_eq!(err.to_string(), "KL inequality evaluated at minimizer");
    }

    #[test]
    fn offset_is_transparent_to_inverse() {
        let env = Desingularizer::MSE.envelope();
        let shifted = env.with_offset(3.25);
        for s in [0.01, 1.0, 40.0] {
            let t = env.primitive(s);
            let ts = shifted.primitive(s);
            assert!((ts - t - 3.25).abs() < 1e-12);
            assert!((shifted.primitive_inv(ts) - s).abs() < 1e-10 * s);
        }
    }
}
