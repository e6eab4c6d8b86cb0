//! Forward operators `A` and noisy problem instances `y = A x̄ + ε`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{extremes_of, qr_orthonormal, sigma_extremes, DEFAULT_RANK_TOL, Mat};
use crate::seeds::rng_from_seed;

/// An explicit matrix with its extreme singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator {
    a: Mat,
    sigma_min: f64,
    sigma_max: f64,
    label: String,
}

impl ForwardOperator {
    /// Wraps `a`, computing its singular value extremes by SVD.
    pub fn from_matrix(a: Mat, label: impl Into<String>) -> Result<Self> {
        let (lo, hi) = sigma_extremes(&a)?;
        Ok(Self {
            a,
            sigma_min: lo,
            sigma_max: hi,
            label: label.into(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            a: Mat::identity(n),
            sigma_min: 1.0,
            sigma_max: 1.0,
            label: "identity".into(),
        }
    }

    pub fn matrix(&self) -> &Mat {
        &self.a
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    /// Smallest nonzero singular value.
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// Spectral norm `|A|`.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn condition_number(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.a.matvec(x)
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.a.tr_matvec(y)
    }
}

/// Which operator family to draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    Gaussian,
    Crafted { lo: f64, hi: f64 },
    Blur { sigma: f64 },
    Identity,
}

impl OperatorKind {
    /// Builds an `m × n` operator. Blur requires `m = n = side²`.
    pub fn build(&self, m: usize, n: usize, seed: u64) -> Result<ForwardOperator> {
        match *self {
            OperatorKind::Gaussian => gaussian_operator(m, n, seed),
            OperatorKind::Crafted { lo, hi } => crafted_spectrum_operator(m, n, lo, hi, seed),
            OperatorKind::Blur { sigma } => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n || m != n {
                    return Err(Error::Invalid(format!(
                        "blur needs a square image with m = n (got m={m}, n={n})"
                    )));
                }
                gaussian_blur_operator(side, sigma)
            }
            OperatorKind::Identity => {
                if m != n {
                    return Err(Error::Invalid("identity operator needs m = n".into()));
                }
                Ok(ForwardOperator::identity(n))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Gaussian => "gaussian",
            OperatorKind::Crafted { .. } => "crafted",
            OperatorKind::Blur { .. } => "blur",
            OperatorKind::Identity => "identity",
        }
    }
}

/// iid standard normal entries.
pub fn gaussian_operator(m: usize, n: usize, seed: u64) -> Result<ForwardOperator> {
    if m == 0 || n == 0 {
        return Err(Error::Invalid("operator dims must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let a = Mat::from_fn(m, n, |_, _| rng.sample(StandardNormal));
    ForwardOperator::from_matrix(a, "gaussian")
}

fn haar_orthogonal(size: usize, rng: &mut impl Rng) -> Result<Mat> {
    let g = Mat::from_fn(size, size, |_, _| rng.sample(StandardNormal));
    qr_orthonormal(&g)
}

/// `A = U diag(s) Vᵀ` with `min(m, n)` singular values evenly spaced in
/// `[lo, hi]` and Haar-distributed orthogonal factors.
pub fn crafted_spectrum_operator(m: usize, n: usize, lo: f64, hi: f64, seed: u64) -> Result<ForwardOperator> {
    if m == 0 || n == 0 {
        return Err(Error::Invalid("operator dims must be positive".into()));
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Invalid(format!("spectrum range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
    }
    let r = m.min(n);
    let s: Vec<f64> = if r == 1 {
        vec![hi]
    } else {
        (0..r).map(|i| hi - (hi - lo) * i as f64 / (r - 1) as f64).collect()
    };
    let mut rng = rng_from_seed(seed);
    let u = haar_orthogonal(m, &mut rng)?;
    let v = haar_orthogonal(n, &mut rng)?;
    let a = Mat::from_fn(m, n, |i, j| (0..r).map(|l| u[(i, l)] * s[l] * v[(j, l)]).sum());
    let lo_eff = if r == 1 { hi } else { lo };
    Ok(ForwardOperator {
        a,
        sigma_min: lo_eff,
        sigma_max: hi,
        label: "crafted".into(),
    })
}

/// Normalized 1-D Gaussian taps `g_0..g_r` (one side, `g_{-j} = g_j`).
pub fn blur_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("blur sigma {sigma} must be positive")));
    }
    let r = (3.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (0..=r)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = raw[0] + 2.0 * raw[1..].iter().sum::<f64>();
    Ok(raw.into_iter().map(|g| g / total).collect())
}

/// Singular values of the circular blur, from its 2-D DFT symbol.
pub fn blur_singular_values(side: usize, sigma: f64) -> Result<Vec<f64>> {
    let taps = blur_kernel(sigma)?;
    let symbol: Vec<f64> = (0..side)
        .map(|w| {
            let t = 2.0 * std::f64::consts::PI * w as f64 / side as f64;
            taps[0] + 2.0 * taps[1..].iter().enumerate().map(|(j, g)| g * (t * (j + 1) as f64).cos()).sum::<f64>()
        })
        .collect();
    let mut out: Vec<f64> = symbol
        .iter()
        .flat_map(|a| symbol.iter().map(move |b| (a * b).abs()))
        .collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

/// Dense matrix of separable 2-D Gaussian convolution on a `side × side`
/// image with periodic boundary; the kernel is cut at radius `⌈3σ⌉` and
/// renormalized.
pub fn gaussian_blur_operator(side: usize, sigma: f64) -> Result<ForwardOperator> {
    let taps = blur_kernel(sigma)?;
    let r = taps.len() - 1;
    if side < 3 || side < 2 * r + 1 {
        return Err(Error::Invalid(format!(
            "image side {side} too small for blur kernel of radius {r}"
        )));
    }
    let n = side * side;
    let mut a = Mat::zeros(n, n);
    let tap = |off: isize| taps[off.unsigned_abs()];
    for pr in 0..side {
        for pc in 0..side {
            let row = pr * side + pc;
            for dr in -(r as isize)..=(r as isize) {
                let qr = (pr as isize + dr).rem_euclid(side as isize) as usize;
                for dc in -(r as isize)..=(r as isize) {
                    let qc = (pc as isize + dc).rem_euclid(side as isize) as usize;
                    a[(row, qr * side + qc)] += tap(dr) * tap(dc);
                }
            }
        }
    }
    let (lo, hi) = extremes_of(&blur_singular_values(side, sigma)?, DEFAULT_RANK_TOL)?;
    Ok(ForwardOperator {
        a,
        sigma_min: lo,
        sigma_max: hi,
        label: "blur".into(),
    })
}

/// `y = A x̄ + ε` with its noiseless counterpart `ȳ = A x̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub op: ForwardOperator,
    pub x_true: Vec<f64>,
    pub noise: Vec<f64>,
    pub y: Vec<f64>,
    pub y_bar: Vec<f64>,
}

impl ProblemInstance {
    pub fn noise_norm(&self) -> f64 {
        crate::linalg::norm(&self.noise)
    }
}

/// Draws iid `N(0, noise_std²)` noise and assembles the observation.
pub fn make_instance(op: &ForwardOperator, x_true: Vec<f64>, noise_std: f64, seed: u64) -> Result<ProblemInstance> {
    if x_true.len() != op.n() {
        return Err(Error::Dimension(format!(
            "signal length {} != operator columns {}",
            x_true.len(),
            op.n()
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Invalid(format!("noise std {noise_std} must be nonnegative")));
    }
    let y_bar = op.apply(&x_true)?;
    let noise = if noise_std == 0.0 {
        vec![0.0; op.m()]
    } else {
        let dist = Normal::new(0.0, noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut rng = rng_from_seed(seed);
        (0..op.m()).map(|_| dist.sample(&mut rng)).collect()
    };
    let y = y_bar.iter().zip(&noise).map(|(a, b)| a + b).collect();
    Ok(ProblemInstance {
        op: op.clone(),
        x_true,
        noise,
        y,
        y_bar,
    })
}
