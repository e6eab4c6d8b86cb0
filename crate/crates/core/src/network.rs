//! The two-layer generator `x = g(u, θ) = V φ(W u) / √k` and its Jacobian.
//!
//! Parameters are `W ∈ ℝ^{k×d}` and `V ∈ ℝ^{n×k}`. The flattened vector θ
//! stores `W` row-major (`W[i][j]` at `i·d + j`) followed, when both layers
//! are trained, by `V` row-major (`V[r][i]` at `k·d + r·k + i`).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sym_eigen, Mat};
use crate::quadrature::normal_expectation;
use crate::seeds::rng_from_seed;

const MOMENT_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// `φ ≡ c`. A degenerate stub whose Jacobian has no `W` component; only
    /// useful for exercising failure paths.
    Constant(f64),
}

impl Activation {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Constant(c) => *c,
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = self.eval(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Constant(_) => 0.0,
        }
    }

    /// Joint bound `B` on `sup|φ'|` and the Lipschitz constant of `φ'`.
    pub fn bound_b(&self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Tanh => 1.0,
            Activation::Constant(_) => 0.0,
        }
    }

    /// `sup|φ|`.
    pub fn sup_abs(&self) -> f64 {
        match self {
            Activation::Sigmoid | Activation::Tanh => 1.0,
            Activation::Constant(c) => c.abs(),
        }
    }

    /// `(C_φ, C_φ')` with `C_f = √E[f(X)²]`, `X ~ N(0,1)`.
    pub fn moments(&self) -> (f64, f64) {
        let c_phi = normal_expectation(MOMENT_NODES, |x| self.eval(x).powi(2)).sqrt();
        let c_dphi = normal_expectation(MOMENT_NODES, |x| self.deriv(x).powi(2)).sqrt();
        (c_phi, c_dphi)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Constant(_) => "constant",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn activation_moments(act: Activation) -> (f64, f64) {
    act.moments()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    BothLayers,
    FixedV,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" | "both_layers" => Ok(TrainMode::BothLayers),
            "fixed_v" | "hidden" => Ok(TrainMode::FixedV),
            other => Err(Error::Parse(format!("unknown train mode '{other}'"))),
        }
    }
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::BothLayers => "both",
            TrainMode::FixedV => "fixed_v",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipNetwork {
    d: usize,
    k: usize,
    n: usize,
    act: Activation,
    u: Vec<f64>,
    mode: TrainMode,
    v_bound: f64,
}

impl DipNetwork {
    /// `u` must have unit norm. `v_bound` is the entry bound `D` on `V`.
    pub fn new(n: usize, k: usize, act: Activation, u: Vec<f64>, mode: TrainMode, v_bound: f64) -> Result<Self> {
        let d = u.len();
        if d == 0 || k == 0 || n == 0 {
            return Err(Error::Invalid(format!("network dims must be positive (d={d}, k={k}, n={n})")));
        }
        if (norm(&u) - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid("network input u must have unit norm".into()));
        }
        if !(v_bound > 0.0) {
            return Err(Error::Invalid("entry bound D must be positive".into()));
        }
        Ok(Self { d, k, n, act, u, mode, v_bound })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn input(&self) -> &[f64] {
        &self.u
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn v_bound(&self) -> f64 {
        self.v_bound
    }

    pub fn with_mode(&self, mode: TrainMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn num_params(&self) -> usize {
        match self.mode {
            TrainMode::BothLayers => self.k * (self.d + self.n),
            TrainMode::FixedV => self.k * self.d,
        }
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.w.shape() != (self.k, self.d) || theta.v.shape() != (self.n, self.k) {
            return Err(Error::Dimension(format!(
                "parameters W {:?}, V {:?} do not fit network (d={}, k={}, n={})",
                theta.w.shape(),
                theta.v.shape(),
                self.d,
                self.k,
                self.n
            )));
        }
        Ok(())
    }

    /// Pre-activations `W u`.
    fn hidden(&self, theta: &ParamVector) -> Vec<f64> {
        (0..self.k).map(|i| dot(theta.w.row(i), &self.u)).collect()
    }

    pub fn forward(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        self.check(theta)?;
        let a: Vec<f64> = self.hidden(theta).into_iter().map(|h| self.act.eval(h)).collect();
        let s = 1.0 / (self.k as f64).sqrt();
        Ok((0..self.n).map(|r| s * dot(theta.v.row(r), &a)).collect())
    }

    /// `J(θ)ᵀ r` as a flat parameter-space vector.
    pub fn vjp(&self, theta: &ParamVector, r: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        if r.len() != self.n {
            return Err(Error::Dimension(format!("cotangent length {} != n = {}", r.len(), self.n)));
        }
        let (k, d) = (self.k, self.d);
        let s = 1.0 / (k as f64).sqrt();
        let h = self.hidden(theta);
        let vtr = theta.v.tr_matvec(r)?;
        let mut g = vec![0.0; self.num_params()];
        for i in 0..k {
            let c = s * self.act.deriv(h[i]) * vtr[i];
            for (gj, uj) in g[i * d..(i + 1) * d].iter_mut().zip(&self.u) {
                *gj = c * uj;
            }
        }
        if self.mode == TrainMode::BothLayers {
            let a: Vec<f64> = h.iter().map(|&x| s * self.act.eval(x)).collect();
            let base = k * d;
            for (row, rr) in r.iter().enumerate() {
                let out = &mut g[base + row * k..base + (row + 1) * k];
                for (o, ai) in out.iter_mut().zip(&a) {
                    *o = rr * ai;
                }
            }
        }
        Ok(g)
    }

    /// Dense `n × p` Jacobian.
    pub fn jacobian(&self, theta: &ParamVector) -> Result<Mat> {
        self.check(theta)?;
        let (k, d, n) = (self.k, self.d, self.n);
        let s = 1.0 / (k as f64).sqrt();
        let h = self.hidden(theta);
        let mut j = Mat::zeros(n, self.num_params());
        for i in 0..k {
            let dphi = s * self.act.deriv(h[i]);
            for r in 0..n {
                let c = dphi * theta.v[(r, i)];
                for (jj, uj) in self.u.iter().enumerate() {
                    j[(r, i * d + jj)] = c * uj;
                }
            }
        }
        if self.mode == TrainMode::BothLayers {
            for i in 0..k {
                let phi = s * self.act.eval(h[i]);
                for r in 0..n {
                    j[(r, k * d + r * k + i)] = phi;
                }
            }
        }
        Ok(j)
    }

    /// `J Jᵀ` from the per-neuron closed form
    /// `(1/k) Σᵢ [φ'(Wⁱu)² |u|² Vᵢ Vᵢᵀ + φ(Wⁱu)² I]`, without forming `J`.
    pub fn jacobian_gram(&self, theta: &ParamVector) -> Result<Mat> {
        self.check(theta)?;
        let (k, n) = (self.k, self.n);
        let h = self.hidden(theta);
        let u2 = dot(&self.u, &self.u);
        let dphi: Vec<f64> = h.iter().map(|&x| self.act.deriv(x)).collect();
        let scaled = Mat::from_fn(n, k, |r, i| theta.v[(r, i)] * dphi[i]);
        let mut g = scaled.gram_rows().scaled(u2 / k as f64);
        if self.mode == TrainMode::BothLayers {
            let diag = h.iter().map(|&x| self.act.eval(x).powi(2)).sum::<f64>() / k as f64;
            for r in 0..n {
                g[(r, r)] += diag;
            }
        }
        Ok(g)
    }

    /// `(σmin(J), σmax(J))` from the eigenvalues of `J Jᵀ`.
    pub fn jacobian_sigma_range(&self, theta: &ParamVector) -> Result<(f64, f64)> {
        let eig = sym_eigen(&self.jacobian_gram(theta)?)?;
        let lo = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0).sqrt();
        let hi = eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt();
        Ok((lo, hi))
    }

    pub fn sigma_min_j(&self, theta: &ParamVector) -> Result<f64> {
        Ok(self.jacobian_sigma_range(theta)?.0)
    }
}

/// Network parameters `θ = (W, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    w: Mat,
    v: Mat,
}

impl ParamVector {
    pub fn new(w: Mat, v: Mat) -> Result<Self> {
        if w.rows() != v.cols() {
            return Err(Error::Dimension(format!(
                "W has {} rows but V has {} columns",
                w.rows(),
                v.cols()
            )));
        }
        Ok(Self { w, v })
    }

    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn flatten(&self, mode: TrainMode) -> Vec<f64> {
        let mut out = self.w.as_slice().to_vec();
        if mode == TrainMode::BothLayers {
            out.extend_from_slice(self.v.as_slice());
        }
        out
    }

    /// Replaces the trained blocks with `flat`; `V` is kept in `FixedV` mode.
    pub fn unflatten(&self, mode: TrainMode, flat: &[f64]) -> Result<Self> {
        let kw = self.w.rows() * self.w.cols();
        let expected = match mode {
            TrainMode::BothLayers => kw + self.v.rows() * self.v.cols(),
            TrainMode::FixedV => kw,
        };
        if flat.len() != expected {
            return Err(Error::Dimension(format!("flat parameter length {} != {expected}", flat.len())));
        }
        let w = Mat::from_vec(self.w.rows(), self.w.cols(), flat[..kw].to_vec())?;
        let v = match mode {
            TrainMode::BothLayers => Mat::from_vec(self.v.rows(), self.v.cols(), flat[kw..].to_vec())?,
            TrainMode::FixedV => self.v.clone(),
        };
        Ok(Self { w, v })
    }

    /// In-place `θ ← θ - step·g` on the trained blocks.
    pub fn axpy_in_place(&mut self, mode: TrainMode, step: f64, g: &[f64]) {
        let kw = self.w.rows() * self.w.cols();
        for (w, gi) in self.w.as_mut_slice().iter_mut().zip(&g[..kw]) {
            *w -= step * gi;
        }
        if mode == TrainMode::BothLayers {
            for (v, gi) in self.v.as_mut_slice().iter_mut().zip(&g[kw..]) {
                *v -= step * gi;
            }
        }
    }

    /// Euclidean distance between the trained blocks.
    pub fn dist(&self, other: &ParamVector, mode: TrainMode) -> f64 {
        let mut s: f64 = self
            .w
            .as_slice()
            .iter()
            .zip(other.w.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if mode == TrainMode::BothLayers {
            s += self
                .v
                .as_slice()
                .iter()
                .zip(other.v.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.v.is_finite()
    }
}

/// Draws `u` uniform on the sphere, `W` iid `N(0,1)` and `V` iid Rademacher
/// (so `D = 1`), in that order from one seeded stream.
pub fn init_network(
    d: usize,
    k: usize,
    n: usize,
    act: Activation,
    mode: TrainMode,
    seed: u64,
) -> Result<(DipNetwork, ParamVector)> {
    if d == 0 || k == 0 || n == 0 {
        return Err(Error::Invalid(format!("network dims must be positive (d={d}, k={k}, n={n})")));
    }
    let mut rng = rng_from_seed(seed);
    let mut u: Vec<f64> = loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if norm(&z) > 0.0 {
            break z;
        }
    };
    let nu = norm(&u);
    u.iter_mut().for_each(|x| *x /= nu);
    let w = Mat::from_fn(k, d, |_, _| rng.sample(StandardNormal));
    let v = Mat::from_fn(n, k, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    let net = DipNetwork::new(n, k, act, u, mode, 1.0)?;
    Ok((net, ParamVector { w, v }))
}
