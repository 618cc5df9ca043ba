//! Diagnostics for trained maps: noise sensitivity, empirical Lipschitz
//! constants (pairwise, local, histogram), the layer-product Lipschitz
//! bound, classification margins and margin-normalized complexity measures.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::linalg::{frobenius_norm, norm2, spectral_norm, DenseMatrix, PowerOptions};
use crate::nn::{Dataset, MlpModel};
use crate::rng::{substream, SeededRng};

/// A map `R^d -> R^m` that can be evaluated pointwise.
pub trait VectorFn {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<F> VectorFn for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self(x))
    }
}

/// A map whose Jacobian is available in closed form.
pub trait Differentiable: VectorFn {
    fn jacobian(&self, x: &[f64]) -> Result<DenseMatrix>;
}

/// `x -> W x`.
#[derive(Debug, Clone)]
pub struct LinearMap(pub DenseMatrix);

impl VectorFn for LinearMap {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.0.cols() {
            return Err(Error::mismatch(
                format!("input of length {}", self.0.cols()),
                x.len(),
            ));
        }
        Ok(self.0.matvec(x))
    }
}

impl Differentiable for LinearMap {
    fn jacobian(&self, _x: &[f64]) -> Result<DenseMatrix> {
        Ok(self.0.clone())
    }
}

/// `||x||_p`; `p = f64::INFINITY` gives the max norm.
pub fn vector_norm(x: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        norm2(x)
    } else if p.is_infinite() {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        x.iter().map(|v| v.abs()).sum()
    } else {
        x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

fn sigma_max_or_zero(w: &DenseMatrix, opts: &PowerOptions) -> Result<f64> {
    match spectral_norm(w, opts) {
        Err(Error::ZeroMatrix) => Ok(0.0),
        other => other,
    }
}

/// Product of the layers' spectral norms: an upper bound on the Lipschitz
/// constant of any network built from them with 1-Lipschitz activations.
pub fn lip_upper_bound<'a>(
    weights: impl IntoIterator<Item = &'a DenseMatrix>,
    opts: &PowerOptions,
) -> Result<f64> {
    let mut product = 1.0;
    let mut any = false;
    for w in weights {
        product *= spectral_norm(w, opts)?;
        any = true;
    }
    if !any {
        return Err(Error::InvalidArgument("no layers given".into()));
    }
    Ok(product)
}

pub type InputPair = (Vec<f64>, Vec<f64>);

/// `||f(a) - f(b)||_q / ||a - b||_p` for one pair.
pub fn lip_ratio<F: VectorFn + ?Sized>(
    f: &F,
    a: &[f64],
    b: &[f64],
    p: f64,
    q: f64,
) -> Result<Option<f64>> {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let den = vector_norm(&diff, p);
    if den == 0.0 {
        return Ok(None);
    }
    let fa = f.eval(a)?;
    let fb = f.eval(b)?;
    let out: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
    Ok(Some(vector_norm(&out, q) / den))
}

/// Largest pairwise ratio `||f(x_i) - f(x_j)||_q / ||x_i - x_j||_p`.
pub fn empirical_lip_global<F: VectorFn + ?Sized>(
    f: &F,
    pairs: &[InputPair],
    p: f64,
    q: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs given".into()));
    }
    let mut best = 0.0f64;
    for (index, (a, b)) in pairs.iter().enumerate() {
        let r = lip_ratio(f, a, b, p, q)?.ok_or(Error::DegeneratePair { index })?;
        best = best.max(r);
    }
    Ok(best)
}

/// Spectral norm of the Jacobian at `x`.
pub fn empirical_lip_local<F: Differentiable + ?Sized>(
    f: &F,
    x: &[f64],
    opts: &PowerOptions,
) -> Result<f64> {
    sigma_max_or_zero(&f.jacobian(x)?, opts)
}

/// Histogram of pairwise empirical Lipschitz ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct LipHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub percentile_90: f64,
    pub percentile_95: f64,
    pub n_pairs: usize,
}

/// Nearest-rank percentile of already sorted values, `q` in `(0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

impl LipHistogram {
    /// Uniform bins over `[0, max ratio]` (`[0, 1]` if every ratio is 0).
    pub fn from_ratios(ratios: &[f64], bins: usize) -> Result<Self> {
        if ratios.is_empty() || bins == 0 {
            return Err(Error::InvalidArgument(
                "histogram needs ratios and at least one bin".into(),
            ));
        }
        let mut sorted = ratios.to_vec();
        sorted.sort_by(f64::total_cmp);
        let max = *sorted.last().expect("nonempty");
        let hi = if max > 0.0 { max } else { 1.0 };
        let width = hi / bins as f64;
        let bin_edges = (0..=bins)
            .map(|i| if i == bins { hi } else { i as f64 * width })
            .collect();
        let mut counts = vec![0usize; bins];
        for &r in ratios {
            let b = ((r / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self {
            bin_edges,
            counts,
            percentile_90: percentile(&sorted, 90.0),
            percentile_95: percentile(&sorted, 95.0),
            n_pairs: ratios.len(),
        })
    }

    /// `bin_lo,bin_hi,count` rows followed by `# p90=<v> p95=<v> n=<n>`.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{}",
                sig(self.bin_edges[i], 12),
                sig(self.bin_edges[i + 1], 12),
                c
            );
        }
        let _ = writeln!(
            s,
            "# p90={} p95={} n={}",
            sig(self.percentile_90, 12),
            sig(self.percentile_95, 12),
            self.n_pairs
        );
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Pairwise Euclidean ratios for `n_pairs` draws. Pair `i` is drawn from
/// stream `i` under `seed`: first `sampler_a`, then `sampler_b`.
pub fn pairwise_ratios<F, A, B>(
    f: &F,
    mut sampler_a: A,
    mut sampler_b: B,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: VectorFn + ?Sized,
    A: FnMut(&mut SeededRng) -> Vec<f64>,
    B: FnMut(&mut SeededRng) -> Vec<f64>,
{
    (0..n_pairs)
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let a = sampler_a(&mut rng);
            let b = sampler_b(&mut rng);
            lip_ratio(f, &a, &b, 2.0, 2.0)?.ok_or(Error::DegeneratePair { index: i })
        })
        .collect()
}

/// Empirical Lipschitz histogram ("eLhist") over `n_pairs` sampled pairs.
pub fn elhist<F, A, B>(
    f: &F,
    sampler_a: A,
    sampler_b: B,
    n_pairs: usize,
    bins: usize,
    seed: u64,
) -> Result<LipHistogram>
where
    F: VectorFn + ?Sized,
    A: FnMut(&mut SeededRng) -> Vec<f64>,
    B: FnMut(&mut SeededRng) -> Vec<f64>,
{
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    let ratios = pairwise_ratios(f, sampler_a, sampler_b, n_pairs, seed)?;
    LipHistogram::from_ratios(&ratios, bins)
}

/// [`elhist`] over pairs of distinct rows of `inputs`. Pair `i` draws its
/// two row indices from stream `i` under `seed`.
pub fn elhist_rows<F: VectorFn + ?Sized>(
    f: &F,
    inputs: &DenseMatrix,
    n_pairs: usize,
    bins: usize,
    seed: u64,
) -> Result<LipHistogram> {
    let n = inputs.rows();
    if n < 2 || n_pairs == 0 {
        return Err(Error::InvalidArgument(
            "need at least two rows and one pair".into(),
        ));
    }
    let ratios = (0..n_pairs)
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            lip_ratio(f, inputs.row(a), inputs.row(b), 2.0, 2.0)?
                .ok_or(Error::DegeneratePair { index: i })
        })
        .collect::<Result<Vec<_>>>()?;
    LipHistogram::from_ratios(&ratios, bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSensitivity {
    /// Largest per-point estimate.
    pub phi: f64,
    pub argmax: usize,
    pub per_point: Vec<f64>,
    /// Monte Carlo standard error of each per-point estimate.
    pub std_errors: Vec<f64>,
}

/// Monte Carlo noise sensitivity
/// `max_x E ||f(x + eta ||x||) - f(x)||^2 / ||f(x)||^2`, `eta ~ N(0, I)`,
/// with `n_noise` draws per point. Point `i` uses its own random stream.
pub fn noise_sensitivity<F: VectorFn + ?Sized>(
    f: &F,
    dataset: &[Vec<f64>],
    n_noise: usize,
    seed: u64,
) -> Result<NoiseSensitivity> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if n_noise < 2 {
        return Err(Error::InvalidArgument("n_noise must be at least 2".into()));
    }
    let mut per_point = Vec::with_capacity(dataset.len());
    let mut std_errors = Vec::with_capacity(dataset.len());
    for (i, x) in dataset.iter().enumerate() {
        let xn = norm2(x);
        if xn == 0.0 {
            return Err(Error::InvalidArgument(format!("input {i} is zero")));
        }
        let fx = f.eval(x)?;
        let fxn2 = fx.iter().map(|v| v * v).sum::<f64>();
        if fxn2 == 0.0 {
            return Err(Error::ZeroOutput { index: i });
        }
        let mut rng = substream(seed, i as u64);
        let mut xp = vec![0.0; x.len()];
        // Welford
        let (mut mean, mut m2) = (0.0, 0.0);
        for s in 0..n_noise {
            for (p, &xi) in xp.iter_mut().zip(x) {
                let z: f64 = rng.sample(StandardNormal);
                *p = xi + xn * z;
            }
            let fp = f.eval(&xp)?;
            let d2: f64 = fp.iter().zip(&fx).map(|(a, b)| (a - b) * (a - b)).sum();
            let ratio = d2 / fxn2;
            let delta = ratio - mean;
            mean += delta / (s + 1) as f64;
            m2 += delta * (ratio - mean);
        }
        per_point.push(mean);
        std_errors.push((m2 / (n_noise - 1) as f64 / n_noise as f64).sqrt());
    }
    let (argmax, phi) =
        per_point
            .iter()
            .cloned()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, v)| if v > b.1 { (i, v) } else { b },
            );
    Ok(NoiseSensitivity {
        phi,
        argmax,
        per_point,
        std_errors,
    })
}

/// `logits[y] - max_{j != y} logits[j]`.
pub fn margin(logits: &[f64], true_class: usize) -> Result<f64> {
    if logits.len() < 2 || true_class >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "margin needs at least two logits and a valid class, got {} logits and class {true_class}",
            logits.len()
        )));
    }
    let rival = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != true_class)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[true_class] - rival)
}

/// `||W||_{2,1}`: sum over columns of the column Euclidean norms.
pub fn norm_2_1(w: &DenseMatrix) -> f64 {
    (0..w.cols()).map(|j| norm2(&w.column(j))).sum()
}

fn check_layers(weights: &[&DenseMatrix]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no layers given".into()));
    }
    if weights.iter().any(|w| frobenius_norm(w) == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    Ok(())
}

/// `prod ||W_i||_2^2 * sum srank(W_i) / margin^2`; `+inf` when `margin <= 0`.
pub fn spec_fro(weights: &[&DenseMatrix], margin_value: f64, opts: &PowerOptions) -> Result<f64> {
    check_layers(weights)?;
    if margin_value <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut prod = 1.0;
    let mut srank_sum = 0.0;
    for w in weights {
        let s = spectral_norm(w, opts)?;
        prod *= s * s;
        srank_sum += (frobenius_norm(w) / s).powi(2);
    }
    Ok(prod * srank_sum / (margin_value * margin_value))
}

/// `prod ||W_i||_2^2 * (sum (||W_i||_{2,1} / ||W_i||_2)^{2/3})^3 / margin^2`;
/// `+inf` when `margin <= 0`.
pub fn spec_l1(weights: &[&DenseMatrix], margin_value: f64, opts: &PowerOptions) -> Result<f64> {
    check_layers(weights)?;
    if margin_value <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut prod = 1.0;
    let mut acc = 0.0;
    for w in weights {
        let s = spectral_norm(w, opts)?;
        prod *= s * s;
        acc += (norm_2_1(w) / s).powf(2.0 / 3.0);
    }
    Ok(prod * acc.powi(3) / (margin_value * margin_value))
}

/// `sum_i ||h_i|| ||d margin / d h_i|| / margin`, where `h_i` runs over the
/// input of every layer (the data point itself and each hidden activation).
pub fn jac_norm_measure(model: &MlpModel, x: &[f64], true_class: usize) -> Result<f64> {
    let g = model.margin_gradients(x, true_class)?;
    if g.margin == 0.0 {
        return Err(Error::ZeroMargin);
    }
    let total: f64 = g
        .activations
        .iter()
        .zip(&g.gradients)
        .map(|(h, j)| norm2(h) * norm2(j))
        .sum();
    Ok(total / g.margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub spec_fro: f64,
    pub spec_l1: f64,
    pub jac_norm: f64,
    pub margin: f64,
    pub lip_upper_bound: f64,
}

pub fn complexity_report(
    model: &MlpModel,
    x: &[f64],
    true_class: usize,
    opts: &PowerOptions,
) -> Result<ComplexityReport> {
    let weights = model.weights();
    let logits = model.predict(x)?;
    let m = margin(&logits, true_class)?;
    let jac_norm = if m > 0.0 {
        jac_norm_measure(model, x, true_class)?
    } else {
        f64::INFINITY
    };
    Ok(ComplexityReport {
        spec_fro: spec_fro(&weights, m, opts)?,
        spec_l1: spec_l1(&weights, m, opts)?,
        jac_norm,
        margin: m,
        lip_upper_bound: lip_upper_bound(weights.iter().copied(), opts)?,
    })
}

/// Complexity reports for the correctly classified points of a dataset.
#[derive(Debug, Clone)]
pub struct ComplexitySummary {
    pub reports: Vec<ComplexityReport>,
    /// Points left out because their margin was not positive.
    pub excluded: usize,
}

pub fn complexity_over(
    model: &MlpModel,
    data: &Dataset,
    opts: &PowerOptions,
) -> Result<ComplexitySummary> {
    let mut reports = Vec::new();
    let mut excluded = 0;
    for i in 0..data.len() {
        let rep = complexity_report(model, data.input(i), data.labels()[i], opts)?;
        if rep.margin > 0.0 {
            reports.push(rep);
        } else {
            excluded += 1;
        }
    }
    Ok(ComplexitySummary { reports, excluded })
}

/// Outcome of comparing pairwise ratios against sampled local constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGlobalCheck {
    pub holds: bool,
    /// Largest pairwise ratio over the dataset.
    pub global: f64,
    /// Largest sampled Jacobian norm over all segments.
    pub local_max: f64,
    /// First pair whose ratio exceeded the largest local constant on its segment.
    pub witness: Option<(usize, usize)>,
}

/// Slack allowed between a pairwise ratio and the sampled local bound.
pub const LOCAL_GLOBAL_SLACK: f64 = 1e-6;

/// For every pair of distinct dataset points, checks that
/// `||f(x_i) - f(x_j)|| / ||x_i - x_j||` does not exceed the largest
/// Jacobian spectral norm sampled on the segment between them (both
/// endpoints plus `n_segment_samples` stratified interior points), up to
/// [`LOCAL_GLOBAL_SLACK`]. Identical points are skipped.
pub fn check_local_global<F: Differentiable + ?Sized>(
    f: &F,
    dataset: &[Vec<f64>],
    n_segment_samples: usize,
    seed: u64,
    opts: &PowerOptions,
) -> Result<LocalGlobalCheck> {
    let mut global = 0.0f64;
    let mut local_max = 0.0f64;
    let mut witness = None;
    let mut pair_index = 0u64;
    for i in 0..dataset.len() {
        for j in i + 1..dataset.len() {
            let (a, b) = (&dataset[i], &dataset[j]);
            let Some(ratio) = lip_ratio(f, a, b, 2.0, 2.0)? else {
                continue;
            };
            global = global.max(ratio);
            let mut rng = substream(seed, pair_index);
            pair_index += 1;
            let mut ts = vec![0.0, 1.0];
            ts.extend(
                (0..n_segment_samples)
                    .map(|s| (s as f64 + rng.random::<f64>()) / n_segment_samples as f64),
            );
            let mut seg_max = 0.0f64;
            for t in ts {
                let x: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect();
                seg_max = seg_max.max(empirical_lip_local(f, &x, opts)?);
            }
            local_max = local_max.max(seg_max);
            if ratio > seg_max + LOCAL_GLOBAL_SLACK && witness.is_none() {
                witness = Some((i, j));
            }
        }
    }
    Ok(LocalGlobalCheck {
        holds: witness.is_none(),
        global,
        local_max,
        witness,
    })
}
