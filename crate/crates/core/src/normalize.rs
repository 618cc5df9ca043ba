//! Stable rank normalization and its spectral relatives.
//!
//! The optimal projection onto `{W' : srank(W') = r}` (optionally keeping
//! the top `k` singular values of `W`) splits `W` into a leading spectral
//! block `S1` and the remainder `S2 = W - S1`, then rescales the two parts
//! independently: `W' = g1 * S1 + g2 * S2`. Which scalars are optimal
//! depends on whether the top of the spectrum must be preserved (`k >= 1`,
//! convex case) or not (`k = 0`, non-convex case).
//!
//! [`srn_layer_step`] is the cheap per-step form used while training: a
//! single power sweep from a persistent vector, spectral normalization,
//! then the `k = 1` stable rank correction.

use crate::error::{Error, Result};
use crate::linalg::{
    dot, frobenius_norm, power_sweep, spectral_norm, Deflation, DenseMatrix, PowerOptions,
    SingularTriplet,
};

/// Relative gap below which two adjacent singular values are treated as tied.
const DEGENERACY_RTOL: f64 = 1e-6;

/// Target stable rank, either absolute or as a fraction of `min(m, n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SrnTarget {
    Rank(f64),
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrnConfig {
    pub target: SrnTarget,
    /// Number of leading singular values to keep exactly (0 = none).
    pub preserve: usize,
}

impl SrnConfig {
    pub fn with_rank(r: f64, preserve: usize) -> Result<Self> {
        if !(r >= 1.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "target stable rank must be >= 1, got {r}"
            )));
        }
        Ok(Self {
            target: SrnTarget::Rank(r),
            preserve,
        })
    }

    pub fn with_ratio(c: f64, preserve: usize) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ratio c must lie in (0, 1], got {c}"
            )));
        }
        Ok(Self {
            target: SrnTarget::Ratio(c),
            preserve,
        })
    }

    /// Absolute target for a given matrix.
    pub fn target_for(&self, w: &DenseMatrix) -> f64 {
        match self.target {
            SrnTarget::Rank(r) => r,
            SrnTarget::Ratio(c) => rank_from_ratio(c, w.rows(), w.cols()),
        }
    }
}

/// `r = c * min(m, n)`, floored at 1 since no nonzero matrix has stable rank below 1.
pub fn rank_from_ratio(c: f64, rows: usize, cols: usize) -> f64 {
    (c * rows.min(cols) as f64).max(1.0)
}

/// `W = S1 + S2` with `S1` the top `max(1, k)` spectral component.
#[derive(Debug, Clone)]
pub struct SpectralPartition {
    pub s1: DenseMatrix,
    pub s2: DenseMatrix,
    pub preserved: Vec<SingularTriplet>,
    /// Next singular value after the preserved block, when one exists.
    pub next_sigma: Option<f64>,
}

impl SpectralPartition {
    pub fn preserved_sigmas(&self) -> Vec<f64> {
        self.preserved.iter().map(|t| t.sigma).collect()
    }

    pub fn sigma1(&self) -> f64 {
        self.preserved[0].sigma
    }

    /// `||S1||_F^2`, from the singular values.
    pub fn s1_energy(&self) -> f64 {
        self.preserved.iter().map(|t| t.sigma * t.sigma).sum()
    }

    /// True when the last preserved singular value is tied with the next one,
    /// so `S1` is not uniquely determined.
    pub fn boundary_tied(&self) -> bool {
        match (self.preserved.last(), self.next_sigma) {
            (Some(last), Some(next)) => next >= last.sigma * (1.0 - DEGENERACY_RTOL),
            _ => false,
        }
    }
}

pub fn spectral_partition(
    w: &DenseMatrix,
    k: usize,
    opts: &PowerOptions,
) -> Result<SpectralPartition> {
    let kk = k.max(1);
    if kk > w.min_dim() {
        return Err(Error::InvalidArgument(format!(
            "preservation index {k} exceeds min(rows, cols) = {}",
            w.min_dim()
        )));
    }
    let mut defl = Deflation::new(w, opts)?;
    let mut preserved = Vec::with_capacity(kk);
    for t in defl.by_ref().take(kk) {
        preserved.push(t?);
    }
    let next_sigma = match defl.next() {
        None => None,
        Some(Ok(t)) => Some(t.sigma),
        Some(Err(Error::NonConvergence { best, .. })) => Some(best.sigma),
        Some(Err(e)) => return Err(e),
    };
    let mut s1 = DenseMatrix::zeros(w.rows(), w.cols());
    for t in &preserved {
        s1.rank_one_update(t.sigma, &t.u, &t.v);
    }
    let s2 = w - &s1;
    Ok(SpectralPartition {
        s1,
        s2,
        preserved,
        next_sigma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationReport {
    pub gamma1: f64,
    pub gamma2: f64,
    pub achieved_srank: f64,
    pub frobenius_distance: f64,
    /// Number of leading singular values kept exactly.
    pub achieved_l: usize,
    /// False when the input was returned unchanged (target already met) or
    /// the remainder vanished numerically.
    pub feasible: bool,
    /// The preserved block ends inside a cluster of tied singular values.
    pub degenerate_spectrum: bool,
}

/// Closed-form optimal stable rank normalization.
///
/// With `g = sqrt(r sigma1^2 - ||S1||_F^2) / ||S2||_F`:
/// * `k = 0`: `g2 = (g + r - 1) / r`, `g1 = g2 / g` for `r > 1`; `g1 = 1`,
///   `g2 = 0` for `r = 1`.
/// * `k >= 1`: `g1 = 1`, `g2 = g`, feasible only when
///   `r >= ||S1||_F^2 / sigma1^2`.
///
/// A target at or above the current stable rank returns `W` unchanged.
pub fn srn_optimal(
    w: &DenseMatrix,
    cfg: &SrnConfig,
    opts: &PowerOptions,
) -> Result<(DenseMatrix, NormalizationReport)> {
    let frob = frobenius_norm(w);
    if frob == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let r = cfg.target_for(w);
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target stable rank must be >= 1, got {r}"
        )));
    }
    let k = cfg.preserve;
    let part = spectral_partition(w, k, opts)?;
    let sigma1 = part.sigma1();
    let srank_w = (frob / sigma1).powi(2);
    let degenerate = part.boundary_tied();

    if r >= srank_w {
        return Ok((
            w.clone(),
            NormalizationReport {
                gamma1: 1.0,
                gamma2: 1.0,
                achieved_srank: srank_w,
                frobenius_distance: 0.0,
                achieved_l: 0,
                feasible: false,
                degenerate_spectrum: degenerate,
            },
        ));
    }

    let s1_energy = part.s1_energy();
    let s2_norm = frobenius_norm(&part.s2);
    let (gamma1, gamma2, feasible) = if k == 0 {
        if r == 1.0 {
            (1.0, 0.0, true)
        } else {
            let gamma = (r - 1.0).sqrt() * sigma1 / s2_norm;
            let g2 = (gamma + r - 1.0) / r;
            (g2 / gamma, g2, true)
        }
    } else {
        let bound = s1_energy / (sigma1 * sigma1);
        if r < bound {
            return Err(Error::Infeasible { target: r, bound });
        }
        if s2_norm < 1e-12 * frob {
            (1.0, 0.0, false)
        } else {
            let mut slack = r * sigma1 * sigma1 - s1_energy;
            if slack < 0.0 && slack > -1e-12 * sigma1 * sigma1 {
                slack = 0.0;
            }
            (1.0, slack.sqrt() / s2_norm, true)
        }
    };

    let out = part.s1.lin_comb(gamma1, &part.s2, gamma2);
    let achieved_srank = (frobenius_norm(&out) / spectral_norm(&out, opts)?).powi(2);
    let report = NormalizationReport {
        gamma1,
        gamma2,
        achieved_srank,
        frobenius_distance: frobenius_norm(&(w - &out)),
        achieved_l: if k == 0 { 0 } else { part.preserved.len() },
        feasible,
        degenerate_spectrum: degenerate,
    };
    Ok((out, report))
}

/// Greedy stable rank normalization.
///
/// Walks the spectrum from the top, absorbing `sigma_i u_i v_i^T` into the
/// preserved block while `r >= (sigma_i^2 + eta) / sigma_1^2`, for at most
/// `k` steps, then rescales the remainder so the result has stable rank
/// exactly `r`. The report's `achieved_l` is the number of absorbed
/// triplets; when it equals `k` the output coincides with
/// [`srn_optimal`] for the same `k`.
pub fn srn_greedy(
    w: &DenseMatrix,
    r: f64,
    k: usize,
    opts: &PowerOptions,
) -> Result<(DenseMatrix, NormalizationReport)> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "greedy normalization needs k >= 1".into(),
        ));
    }
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target stable rank must be >= 1, got {r}"
        )));
    }
    let frob2 = frobenius_norm(w).powi(2);
    if frob2 == 0.0 {
        return Err(Error::ZeroMatrix);
    }

    let mut defl = Deflation::new(w, opts)?;
    let mut s1 = DenseMatrix::zeros(w.rows(), w.cols());
    let mut beta = frob2;
    let mut eta = 0.0;
    let mut l = 0;
    let mut sigma1 = 0.0;
    for i in 0..k {
        let Some(t) = defl.next() else { break };
        let t = t?;
        if i == 0 {
            sigma1 = t.sigma;
            let srank = frob2 / (sigma1 * sigma1);
            if r >= srank {
                return Err(Error::TargetNotBelowStableRank { target: r, srank });
            }
        }
        if r >= (t.sigma * t.sigma + eta) / (sigma1 * sigma1) {
            s1.rank_one_update(t.sigma, &t.u, &t.v);
            eta += t.sigma * t.sigma;
            beta -= t.sigma * t.sigma;
            l += 1;
        } else {
            break;
        }
    }
    let eta = r * sigma1 * sigma1 - eta;
    let scale = (eta.max(0.0) / beta).sqrt();
    let remainder = w - &s1;
    let out = s1.lin_comb(1.0, &remainder, scale);

    let achieved_srank = (frobenius_norm(&out) / spectral_norm(&out, opts)?).powi(2);
    let report = NormalizationReport {
        gamma1: 1.0,
        gamma2: scale,
        achieved_srank,
        frobenius_distance: frobenius_norm(&(w - &out)),
        achieved_l: l,
        feasible: true,
        degenerate_spectrum: false,
    };
    Ok((out, report))
}

/// Best rank-`t` approximation `sum_{i<=t} sigma_i u_i v_i^T`.
pub fn truncate_rank(w: &DenseMatrix, t: usize, opts: &PowerOptions) -> Result<DenseMatrix> {
    if t == 0 || t > w.min_dim() {
        return Err(Error::InvalidArgument(format!(
            "truncation rank must lie in 1..={}, got {t}",
            w.min_dim()
        )));
    }
    let mut out = DenseMatrix::zeros(w.rows(), w.cols());
    for trip in Deflation::new(w, opts)?.take(t) {
        let trip = trip?;
        out.rank_one_update(trip.sigma, &trip.u, &trip.v);
    }
    Ok(out)
}

/// `W / sigma_1(W)`.
pub fn spectral_normalize_approx(w: &DenseMatrix, opts: &PowerOptions) -> Result<DenseMatrix> {
    let s1 = spectral_norm(w, opts)?;
    Ok(w.scale(1.0 / s1))
}

/// Frobenius-nearest matrix with spectral norm at most `s`: every singular
/// value above `s` is clipped to `s`, the rest are kept.
pub fn spectral_clip_optimal(w: &DenseMatrix, s: f64, opts: &PowerOptions) -> Result<DenseMatrix> {
    spectral_clip_counted(w, s, opts).map(|(m, _)| m)
}

/// [`spectral_clip_optimal`] plus the number of clipped singular values.
pub fn spectral_clip_counted(
    w: &DenseMatrix,
    s: f64,
    opts: &PowerOptions,
) -> Result<(DenseMatrix, usize)> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "clip level must be positive, got {s}"
        )));
    }
    let mut out = w.clone();
    let mut clipped = 0;
    for t in Deflation::new(w, opts)? {
        let t = t?;
        if t.sigma < s {
            break;
        }
        out.rank_one_update(s - t.sigma, &t.u, &t.v);
        clipped += 1;
    }
    Ok((out, clipped))
}

/// Result of one training-time normalization of a layer weight.
#[derive(Debug, Clone)]
pub struct LayerStep {
    pub weight: DenseMatrix,
    /// `u^T W v` for the swept vectors.
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `||W / sigma - u v^T||_F`.
    pub remainder_norm: f64,
    /// `Some(sqrt(r - 1) / remainder_norm)` when the stable rank correction fired.
    pub rescale: Option<f64>,
}

impl LayerStep {
    /// Normalization for fixed `(u, v)`, with no power sweep. `target = None`
    /// gives plain spectral normalization.
    pub fn from_vectors(
        w: &DenseMatrix,
        u: &[f64],
        v: &[f64],
        target: Option<f64>,
    ) -> Result<Self> {
        let sigma = dot(u, &w.matvec(v));
        if sigma == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        let wf = w.scale(1.0 / sigma);
        let mut rem = wf.clone();
        rem.rank_one_update(-1.0, u, v);
        let remainder_norm = frobenius_norm(&rem);

        let (weight, rescale) = match target {
            Some(r) if remainder_norm > (r - 1.0).sqrt() => {
                let scale = (r - 1.0).sqrt() / remainder_norm;
                let mut out = rem.scale(scale);
                out.rank_one_update(1.0, u, v);
                (out, Some(scale))
            }
            _ => (wf, None),
        };
        Ok(Self {
            weight,
            sigma,
            u: u.to_vec(),
            v: v.to_vec(),
            remainder_norm,
            rescale,
        })
    }

    /// Pulls a loss gradient with respect to the normalized weight back to
    /// the raw weight `w`. `u` and `v` are held constant; `sigma` and the
    /// stable rank rescale are differentiated through.
    pub fn backprop(&self, w: &DenseMatrix, grad_out: &DenseMatrix) -> DenseMatrix {
        let grad_wf = match self.rescale {
            Some(scale) => {
                let mut rem = w.scale(1.0 / self.sigma);
                rem.rank_one_update(-1.0, &self.u, &self.v);
                let n2 = self.remainder_norm * self.remainder_norm;
                let proj = grad_out.frobenius_inner(&rem) / n2;
                grad_out.lin_comb(scale, &rem, -scale * proj)
            }
            None => grad_out.clone(),
        };
        let mut grad_w = grad_wf.scale(1.0 / self.sigma);
        let coupling = grad_wf.frobenius_inner(w) / (self.sigma * self.sigma);
        grad_w.rank_one_update(-coupling, &self.u, &self.v);
        grad_w
    }
}

/// One sweep of power iteration from `u_state`, spectral normalization,
/// then the `k = 1` stable rank correction: if the remainder
/// `W/sigma - u v^T` has Frobenius norm above `sqrt(r - 1)` it is rescaled
/// onto that radius, otherwise `W/sigma` is returned as is.
pub fn srn_layer_step(w: &DenseMatrix, r: f64, u_state: &mut [f64]) -> Result<LayerStep> {
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target stable rank must be >= 1, got {r}"
        )));
    }
    layer_step(w, Some(r), u_state)
}

/// Spectral-only variant of [`srn_layer_step`].
pub fn sn_layer_step(w: &DenseMatrix, u_state: &mut [f64]) -> Result<LayerStep> {
    layer_step(w, None, u_state)
}

fn layer_step(w: &DenseMatrix, target: Option<f64>, u_state: &mut [f64]) -> Result<LayerStep> {
    if frobenius_norm(w) == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let SingularTriplet { u, v, .. } = power_sweep(w, u_state)?;
    LayerStep::from_vectors(w, &u, &v, target)
}
