//! Dense real linear algebra.
//!
//! Everything here works on small-to-medium dense matrices (up to a few
//! thousand on a side). Singular values come from one-sided (Hestenes)
//! Jacobi, symmetric eigenproblems from cyclic two-sided Jacobi. Both are
//! deterministic and accurate to high relative precision.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Singular values below `DEFAULT_RANK_TOL * sigma_max` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const JACOBI_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Matrix whose columns are the given vectors (all of equal length).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Dimension("ragged column set".into()));
        }
        Ok(Self::from_fn(rows, columns.len(), |i, j| columns[j][i]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `M x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `Mᵀ x`
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Dimension(format!(
                "transposed matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        Ok(out)
    }

    /// `M Mᵀ`
    pub fn gram_rows(&self) -> Mat {
        let mut g = Mat::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `Mᵀ M`
    pub fn gram_cols(&self) -> Mat {
        self.transpose().gram_rows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Thin singular value decomposition `M = U diag(s) Vᵀ`, `s` descending.
///
/// `U` is `rows x r` and `V` is `cols x r` with `r = min(rows, cols)`.
/// Columns of `U` that belong to a zero singular value are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub v: Mat,
}

impl Svd {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }
}

/// One-sided Jacobi SVD.
pub fn svd(m: &Mat) -> Svd {
    if m.rows < m.cols {
        let t = svd(&m.transpose());
        return Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    let (rows, cols) = m.shape();
    // Columns of M and of the accumulated right rotation, stored contiguously.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u = Mat::zeros(rows, cols);
    let mut vm = Mat::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    for (out_j, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..rows {
                u[(i, out_j)] = a[j][i] / sigma;
            }
        }
        for i in 0..cols {
            vm[(i, out_j)] = v[j][i];
        }
    }
    Svd {
        u,
        singular_values: s,
        v: vm,
    }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Eigendecomposition of a symmetric matrix: eigenvalues ascending and the
/// matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn sym_eigen(s: &Mat) -> Result<SymEigen> {
    let n = s.rows;
    if s.cols != n {
        return Err(Error::Dimension(format!(
            "eigensolver needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    let mut a = s.clone();
    let mut vecs = Mat::identity(n);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..n {
            diag += a[(i, i)] * a[(i, i)];
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                if apq.abs() <= 1e-18 * (app.abs() + aqq.abs()) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = vecs[(k, p)];
                    let vkq = vecs[(k, q)];
                    vecs[(k, p)] = c * vkp - sn * vkq;
                    vecs[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = Mat::from_fn(n, n, |r, c| vecs[(r, order[c])]);
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Smallest nonzero and largest singular value, with the default rank
/// tolerance.
pub fn sigma_extremes(m: &Mat) -> Result<(f64, f64)> {
    sigma_extremes_with_tol(m, DEFAULT_RANK_TOL)
}

pub fn sigma_extremes_with_tol(m: &Mat, tol: f64) -> Result<(f64, f64)> {
    let s = svd(m).singular_values;
    extremes_of(&s, tol)
}

/// Extremes of an already computed list of (nonnegative) singular values.
pub fn extremes_of(singular_values: &[f64], tol: f64) -> Result<(f64, f64)> {
    let max = singular_values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let min = singular_values
        .iter()
        .copied()
        .filter(|&s| s > tol * max)
        .fold(f64::INFINITY, f64::min);
    Ok((min, max))
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn orthonormal_range_basis(m: &Mat) -> Result<Mat> {
    orthonormal_range_basis_with_tol(m, DEFAULT_RANK_TOL)
}

pub fn orthonormal_range_basis_with_tol(m: &Mat, tol: f64) -> Result<Mat> {
    let dec = svd(m);
    let smax = dec.sigma_max();
    if smax == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let rank = dec
        .singular_values
        .iter()
        .take_while(|&&s| s > tol * smax)
        .count();
    Ok(Mat::from_fn(m.rows, rank, |i, j| dec.u[(i, j)]))
}

/// Orthonormal basis of the range of a symmetric positive semidefinite
/// matrix, read off its eigenvectors.
pub fn psd_range_basis(gram: &Mat, tol: f64) -> Result<Mat> {
    let eig = sym_eigen(gram)?;
    let lmax = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if lmax <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    // Eigenvalues are squared singular values of any square root factor.
    // A zero eigenvalue comes back as O(n eps lmax), i.e. O(sqrt(n eps)) on
    // the singular value scale, so tol is floored there.
    let tol = tol.max((gram.rows as f64 * f64::EPSILON).sqrt() * 10.0);
    let keep: Vec<usize> = (0..gram.rows)
        .filter(|&i| eig.eigenvalues[i].max(0.0).sqrt() > tol * lmax.sqrt())
        .collect();
    Ok(Mat::from_fn(gram.rows, keep.len(), |i, j| {
        eig.eigenvectors[(i, keep[j])]
    }))
}

/// Smallest singular value of `A Q`, zero included: the exact value of
/// `inf { |A z| / |z| : z in range(Q) }` for `Q` with orthonormal columns.
pub fn conic_sigma_min(a: &Mat, q: &Mat) -> Result<f64> {
    if a.cols != q.rows {
        return Err(Error::Dimension(format!(
            "operator has {} columns but basis vectors have length {}",
            a.cols, q.rows
        )));
    }
    if q.cols == 0 {
        return Err(Error::Invalid("empty subspace".into()));
    }
    let aq = a.matmul(q)?;
    if q.cols > a.rows {
        // more directions than rows: A Q has a nontrivial kernel
        return Ok(0.0);
    }
    let s = svd(&aq).singular_values;
    Ok(s.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Orthonormal `Q` from the QR factorization of a full-column-rank matrix,
/// normalized so that `R` has a positive diagonal.
pub fn qr_orthonormal(m: &Mat) -> Result<Mat> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(Error::Dimension(format!(
            "QR of a wide {rows}x{cols} matrix"
        )));
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v = m.column(j);
        let original = norm(&v);
        // Two passes of modified Gram-Schmidt keep Q orthonormal to rounding.
        for _ in 0..2 {
            for qi in &q {
                let r = dot(qi, &v);
                for (x, y) in v.iter_mut().zip(qi) {
                    *x -= r * y;
                }
            }
        }
        let nv = norm(&v);
        if nv <= 1e-12 * original.max(f64::MIN_POSITIVE) {
            return Err(Error::Invalid("QR of a rank-deficient matrix".into()));
        }
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    Mat::from_columns(&q)
}
