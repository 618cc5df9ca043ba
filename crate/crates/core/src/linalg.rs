//! Dense real matrices and the spectral kernels built on them.
//!
//! Everything here is a pure function of its inputs. Randomised start
//! vectors come from a seeded ChaCha stream, so two calls with the same
//! seed walk exactly the same iterates.
//!
//! [`full_svd_oracle`] is a one-sided Jacobi SVD capped at 64 columns. It
//! exists to check the power-iteration paths and is not used by them.

use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest `min(rows, cols)` accepted by [`full_svd_oracle`].
pub const ORACLE_CAP: usize = 64;

/// Row-major real `rows x cols` matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::mismatch(
                format!("{} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::mismatch(
                format!("{cols} columns"),
                format!("{} columns", bad.len()),
            ));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square diagonal matrix.
    pub fn from_diag(diag: &[f64]) -> Self {
        Self::from_diag_rect(diag.len(), diag.len(), diag)
    }

    /// `rows x cols` matrix with `diag` on the main diagonal (extra entries ignored).
    pub fn from_diag_rect(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            m.data[i * cols + i] = d;
        }
        m
    }

    /// i.i.d. standard normal entries.
    pub fn random_normal(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(rows, cols);
        m.data
            .iter_mut()
            .for_each(|x| *x = rng.sample(StandardNormal));
        m
    }

    /// `rows x cols` matrix (rows >= cols) whose columns are orthonormal,
    /// obtained by Gram-Schmidt on a Gaussian draw.
    pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if cols > rows {
            return Err(Error::InvalidArgument(format!(
                "cannot fit {cols} orthonormal columns in dimension {rows}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
        while basis.len() < cols {
            let mut q: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
            // two passes keep the basis orthogonal to working precision
            for _ in 0..2 {
                orthogonalize(&mut q, &basis);
            }
            let n = norm2(&q);
            if n > 1e-8 {
                q.iter_mut().for_each(|x| *x /= n);
                basis.push(q);
            }
        }
        let mut m = Self::zeros(rows, cols);
        for (j, q) in basis.iter().enumerate() {
            for (i, &x) in q.iter().enumerate() {
                m.data[i * cols + j] = x;
            }
        }
        Ok(m)
    }

    /// `U diag(sigmas) V^T` with Haar-like random orthonormal `U`, `V`.
    pub fn with_spectrum(rows: usize, cols: usize, sigmas: &[f64], seed: u64) -> Result<Self> {
        let p = sigmas.len();
        if p == 0 || p > rows.min(cols) {
            return Err(Error::InvalidArgument(format!(
                "{p} singular values do not fit a {rows}x{cols} matrix"
            )));
        }
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument(
                "singular values must be finite and nonnegative".into(),
            ));
        }
        let u = Self::random_orthonormal(rows, p, seed)?;
        let v = Self::random_orthonormal(cols, p, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
        let mut m = Self::zeros(rows, cols);
        for (k, &s) in sigmas.iter().enumerate() {
            let uk = u.column(k);
            let vk = v.column(k);
            m.rank_one_update(s, &uk, &vk);
        }
        Ok(m)
    }

    /// `sigma * u v^T`.
    pub fn outer(sigma: f64, u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        m.rank_one_update(sigma, u, v);
        m
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

    pub fn min_dim(&self) -> usize {
        self.rows.min(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `W x`.
    ///
    /// # Panics
    /// If `x.len() != cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec: length mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `W^T y`.
    ///
    /// # Panics
    /// If `y.len() != rows`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "matvec_t: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            if yi != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, &w)| *o += yi * w);
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::mismatch(
                format!("{} rows on the right", self.cols),
                format!("{} rows", other.rows),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    out_row
                        .iter_mut()
                        .zip(other.row(k))
                        .for_each(|(o, &b)| *o += a * b);
                }
            }
        }
        Ok(out)
    }

    /// `self += alpha * u v^T`.
    pub fn rank_one_update(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows, "rank_one_update: u length");
        assert_eq!(v.len(), self.cols, "rank_one_update: v length");
        for (row, &ui) in self.data.chunks_exact_mut(self.cols).zip(u) {
            let a = alpha * ui;
            row.iter_mut().zip(v).for_each(|(w, &vj)| *w += a * vj);
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * alpha).collect(),
        }
    }

    /// `alpha * self + beta * other`.
    pub fn lin_comb(&self, alpha: f64, other: &DenseMatrix, beta: f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "lin_comb: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }

    /// Frobenius inner product `<self, other>_F`.
    pub fn frobenius_inner(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(
            self.shape(),
            other.shape(),
            "frobenius_inner: shape mismatch"
        );
        dot(&self.data, &other.data)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;

    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.lin_comb(1.0, rhs, 1.0)
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;

    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.lin_comb(1.0, rhs, -1.0)
    }
}

impl Mul<f64> for &DenseMatrix {
    type Output = DenseMatrix;

    fn mul(self, rhs: f64) -> DenseMatrix {
        self.scale(rhs)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Removes the components of `x` along each (unit) vector in `basis`.
fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for q in basis {
        let c = dot(x, q);
        x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
    }
}

pub fn frobenius_norm(w: &DenseMatrix) -> f64 {
    norm2(&w.data)
}

/// `(sigma, u, v)` with `W v = sigma u` and `W^T u = sigma v` (approximately).
#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriplet {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SingularTriplet {
    /// Flip signs so the first non-negligible entry of `u` is positive.
    fn canonicalize(&mut self) {
        if let Some(&first) = self.u.iter().find(|x| x.abs() > 1e-10) {
            if first < 0.0 {
                self.u.iter_mut().for_each(|x| *x = -*x);
                self.v.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
}

/// Controls for the iterative spectral routines.
///
/// An iterate counts as converged once the relative residual
/// `||W^T u - sigma v|| / sigma` drops below `tol`; that bounds the
/// singular-vector error by roughly `tol / gap` and the sigma error by its
/// square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl PowerOptions {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_max_iter(self, max_iter: usize) -> Self {
        Self { max_iter, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Top singular triplet by alternating power iteration.
///
/// Returns [`Error::NonConvergence`] carrying the last iterate when the
/// residual test is not met within `max_iter` sweeps.
pub fn power_iteration(w: &DenseMatrix, opts: &PowerOptions) -> Result<SingularTriplet> {
    opts.validate()?;
    if frobenius_norm(w) == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    power_iteration_deflated(w, opts, &mut rng, &[], &[])
}

/// Power iteration on `w` restricted to the orthogonal complement of the
/// already-found singular vectors.
fn power_iteration_deflated(
    w: &DenseMatrix,
    opts: &PowerOptions,
    rng: &mut ChaCha8Rng,
    found_u: &[Vec<f64>],
    found_v: &[Vec<f64>],
) -> Result<SingularTriplet> {
    let mut u = vec![0.0; w.rows];
    let mut start_norm = 0.0;
    for _ in 0..8 {
        u.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        orthogonalize(&mut u, found_u);
        start_norm = norm2(&u);
        if start_norm > 1e-8 {
            break;
        }
    }
    if start_norm <= 1e-8 {
        return Err(Error::ZeroMatrix);
    }
    u.iter_mut().for_each(|x| *x /= start_norm);

    let mut v = vec![0.0; w.cols];
    let mut sigma = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut vn = w.matvec_t(&u);
        orthogonalize(&mut vn, found_v);
        let nv = norm2(&vn);
        if nv == 0.0 {
            // u sits in the left null space of what is left of W
            return Err(Error::ZeroMatrix);
        }
        vn.iter_mut().for_each(|x| *x /= nv);
        v = vn;

        let mut un = w.matvec(&v);
        orthogonalize(&mut un, found_u);
        sigma = norm2(&un);
        if sigma == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        un.iter_mut().for_each(|x| *x /= sigma);
        u = un;

        let mut r = w.matvec_t(&u);
        orthogonalize(&mut r, found_v);
        residual = r
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - sigma * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / sigma;
        if residual <= opts.tol {
            let mut t = SingularTriplet { sigma, u, v };
            t.canonicalize();
            return Ok(t);
        }
    }
    let mut best = SingularTriplet { sigma, u, v };
    best.canonicalize();
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
        best: Box::new(best),
    })
}

/// One alternating sweep from a caller-held left vector, as used during
/// training: `v = W^T u / |W^T u|`, `u = W v / |W v|`, `sigma = u^T W v`.
/// `u_state` is overwritten with the new `u`.
pub fn power_sweep(w: &DenseMatrix, u_state: &mut [f64]) -> Result<SingularTriplet> {
    if u_state.len() != w.rows {
        return Err(Error::mismatch(
            format!("u of length {}", w.rows),
            u_state.len(),
        ));
    }
    let mut v = w.matvec_t(u_state);
    let nv = norm2(&v);
    if nv == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut u = w.matvec(&v);
    let nu = norm2(&u);
    if nu == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    u.iter_mut().for_each(|x| *x /= nu);
    let sigma = dot(&u, &w.matvec(&v));
    u_state.copy_from_slice(&u);
    Ok(SingularTriplet { sigma, u, v })
}

/// Random unit vector, for seeding a persistent power-iteration state.
pub fn random_unit_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut x: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&x);
        if n > 1e-8 {
            x.iter_mut().for_each(|a| *a /= n);
            return x;
        }
    }
}

/// Lazily produces singular triplets in descending order by power
/// iteration with rank-one deflation `W <- W - sigma u v^T`.
///
/// Each new start vector and iterate is re-orthogonalised against the
/// triplets already found. Iteration ends after `min(rows, cols)`
/// triplets or once the deflated residual falls below `tol * sigma_1` in
/// Frobenius norm.
pub struct Deflation {
    residual: DenseMatrix,
    opts: PowerOptions,
    rng: ChaCha8Rng,
    found_u: Vec<Vec<f64>>,
    found_v: Vec<Vec<f64>>,
    sigma1: Option<f64>,
    done: bool,
}

impl Deflation {
    pub fn new(w: &DenseMatrix, opts: &PowerOptions) -> Result<Self> {
        opts.validate()?;
        if frobenius_norm(w) == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        Ok(Self {
            residual: w.clone(),
            opts: *opts,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            found_u: Vec::new(),
            found_v: Vec::new(),
            sigma1: None,
            done: false,
        })
    }

    /// What is left of `W` after subtracting the triplets found so far.
    pub fn residual(&self) -> &DenseMatrix {
        &self.residual
    }

    pub fn found(&self) -> usize {
        self.found_u.len()
    }
}

impl Iterator for Deflation {
    type Item = Result<SingularTriplet>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.found_u.len() >= self.residual.min_dim() {
            return None;
        }
        if let Some(s1) = self.sigma1 {
            if frobenius_norm(&self.residual) < self.opts.tol * s1 {
                self.done = true;
                return None;
            }
        }
        let t = match power_iteration_deflated(
            &self.residual,
            &self.opts,
            &mut self.rng,
            &self.found_u,
            &self.found_v,
        ) {
            Ok(t) => t,
            Err(Error::ZeroMatrix) if self.sigma1.is_some() => {
                self.done = true;
                return None;
            }
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        };
        self.residual.rank_one_update(-t.sigma, &t.u, &t.v);
        self.sigma1.get_or_insert(t.sigma);
        self.found_u.push(t.u.clone());
        self.found_v.push(t.v.clone());
        Some(Ok(t))
    }
}

/// Up to `k` leading singular triplets; shorter when `W` runs out of rank.
pub fn top_k_svd(w: &DenseMatrix, k: usize, opts: &PowerOptions) -> Result<Vec<SingularTriplet>> {
    if k == 0 || k > w.min_dim() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            w.min_dim()
        )));
    }
    Deflation::new(w, opts)?.take(k).collect()
}

/// Largest singular value. A non-converged run still yields a usable
/// sigma (the Rayleigh quotient approaches sigma_1 from below even when
/// the top vectors are not resolved), so it is accepted here.
pub fn spectral_norm(w: &DenseMatrix, opts: &PowerOptions) -> Result<f64> {
    match power_iteration(w, opts) {
        Ok(t) => Ok(t.sigma),
        Err(Error::NonConvergence { best, .. }) => Ok(best.sigma),
        Err(e) => Err(e),
    }
}

/// `||W||_F^2 / sigma_1(W)^2`.
pub fn stable_rank(w: &DenseMatrix) -> Result<f64> {
    stable_rank_with(w, &PowerOptions::default())
}

pub fn stable_rank_with(w: &DenseMatrix, opts: &PowerOptions) -> Result<f64> {
    let s1 = spectral_norm(w, opts)?;
    let f = frobenius_norm(w);
    Ok((f / s1).powi(2))
}

/// Number of singular values above `max(m, n) * eps * sigma_1`.
///
/// Exact (Jacobi) up to the reference cap, deflation beyond it; a
/// non-converged deflation step keeps its last iterate.
pub fn numerical_rank(w: &DenseMatrix, opts: &PowerOptions) -> Result<usize> {
    let frob = frobenius_norm(w);
    if frob == 0.0 {
        return Ok(0);
    }
    let eps = w.rows.max(w.cols) as f64 * f64::EPSILON;
    if w.min_dim() <= ORACLE_CAP {
        let s = full_svd_oracle(w)?.sigmas();
        return Ok(s.iter().filter(|&&x| x > eps * s[0]).count());
    }
    let mut residual = w.clone();
    let mut sigma1 = None;
    let mut rank = 0;
    while rank < w.min_dim() {
        let t = match power_iteration(&residual, opts) {
            Ok(t) => t,
            Err(Error::NonConvergence { best, .. }) => *best,
            Err(Error::ZeroMatrix) => break,
            Err(e) => return Err(e),
        };
        let s1 = *sigma1.get_or_insert(t.sigma);
        if t.sigma <= eps * s1 {
            break;
        }
        rank += 1;
        residual.rank_one_update(-t.sigma, &t.u, &t.v);
        if frobenius_norm(&residual) <= eps * s1 {
            break;
        }
    }
    Ok(rank)
}

/// Full decomposition, triplets sorted by descending sigma.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub triplets: Vec<SingularTriplet>,
}

impl SvdResult {
    pub fn sigmas(&self) -> Vec<f64> {
        self.triplets.iter().map(|t| t.sigma).collect()
    }

    pub fn reconstruct(&self, rows: usize, cols: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows, cols);
        for t in &self.triplets {
            m.rank_one_update(t.sigma, &t.u, &t.v);
        }
        m
    }

    /// Stable rank from the full spectrum.
    pub fn stable_rank(&self) -> f64 {
        let s = self.sigmas();
        s.iter().map(|x| x * x).sum::<f64>() / (s[0] * s[0])
    }
}

/// One-sided (Hestenes) Jacobi SVD. Reference implementation for matrices
/// with `min(rows, cols) <= 64`; returns `min(rows, cols)` triplets.
pub fn full_svd_oracle(w: &DenseMatrix) -> Result<SvdResult> {
    let p = w.min_dim();
    if p > ORACLE_CAP {
        return Err(Error::DimensionTooLarge {
            dim: p,
            cap: ORACLE_CAP,
        });
    }
    if w.rows < w.cols {
        let mut t = full_svd_oracle(&w.transpose())?;
        for tr in &mut t.triplets {
            std::mem::swap(&mut tr.u, &mut tr.v);
            tr.canonicalize();
        }
        return Ok(t);
    }

    let (m, n) = (w.rows, w.cols);
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| w.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..100 {
        let mut rotated = false;
        for p_ in 0..n {
            for q in p_ + 1..n {
                let alpha = dot(&a[p_], &a[p_]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p_], &a[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p_, q, c, s);
                rotate(&mut v, p_, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = a.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut triplets = Vec::with_capacity(n);
    for &j in &order {
        let sigma = norms[j];
        let u = if sigma > 1e-13 * scale && sigma > 0.0 {
            a[j].iter().map(|x| x / sigma).collect()
        } else {
            complete_basis(m, &us)
        };
        us.push(u.clone());
        let mut t = SingularTriplet {
            sigma: if sigma > 1e-13 * scale { sigma } else { 0.0 },
            u,
            v: v[j].clone(),
        };
        t.canonicalize();
        triplets.push(t);
    }
    Ok(SvdResult { triplets })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// A unit vector orthogonal to `basis`, picked from the standard basis.
fn complete_basis(dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_norm = 0.0;
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        orthogonalize(&mut e, basis);
        orthogonalize(&mut e, basis);
        let n = norm2(&e);
        if n > best_norm {
            best_norm = n;
            best = e;
        }
    }
    best.iter_mut().for_each(|x| *x /= best_norm);
    best
}
