//! Seeded property suites over the normalization and measurement routines.
//!
//! Each suite draws `n` cases from per-case random streams under one seed,
//! checks a fixed list of properties on every case, and tallies passes and
//! failures per property. The matrix of the first failing case is kept as a
//! witness.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, full_svd_oracle, DenseMatrix, PowerOptions};
use crate::measures::{
    check_local_global, empirical_lip_global, lip_upper_bound, noise_sensitivity, LinearMap,
};
use crate::nn::MlpModel;
use crate::normalize::{srn_greedy, srn_optimal, SrnConfig};
use crate::rng::{substream, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Theorem1,
    Claim1,
    Monotonicity,
    Noise,
    Lipschitz,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Theorem1,
        Suite::Claim1,
        Suite::Monotonicity,
        Suite::Noise,
        Suite::Lipschitz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Claim1 => "claim1",
            Suite::Monotonicity => "monotonicity",
            Suite::Noise => "noise",
            Suite::Lipschitz => "lipschitz",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyTally {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub properties: Vec<PropertyTally>,
    pub witness: Option<DenseMatrix>,
}

impl SuiteReport {
    fn new(suite: Suite, names: &[&'static str]) -> Self {
        Self {
            suite,
            cases: 0,
            properties: names
                .iter()
                .map(|&name| PropertyTally {
                    name,
                    passed: 0,
                    failed: 0,
                })
                .collect(),
            witness: None,
        }
    }

    fn record(&mut self, name: &str, ok: bool, w: &DenseMatrix) {
        let p = self
            .properties
            .iter_mut()
            .find(|p| p.name == name)
            .expect("property registered");
        if ok {
            p.passed += 1;
        } else {
            p.failed += 1;
            if self.witness.is_none() {
                self.witness = Some(w.clone());
            }
        }
    }

    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.failed == 0)
    }

    pub fn failures(&self) -> usize {
        self.properties.iter().map(|p| p.failed).sum()
    }
}

impl fmt::Display for SuiteReport {
    /// One `suite=.. property=.. passed=.. failed=..` line per property.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            writeln!(
                f,
                "suite={} property={} passed={} failed={}",
                self.suite.name(),
                p.name,
                p.passed,
                p.failed
            )?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, n: usize, seed: u64, opts: &PowerOptions) -> Result<SuiteReport> {
    match suite {
        Suite::Theorem1 => theorem1(n, seed, opts),
        Suite::Claim1 => claim1(n, seed, opts),
        Suite::Monotonicity => monotonicity(n, seed, opts),
        Suite::Noise => noise(n, seed),
        Suite::Lipschitz => lipschitz(n, seed, opts),
    }
}

/// Absolute tolerance on stable ranks and singular values.
const TOL: f64 = 1e-8;
/// Grid size for the scalar-family oracle.
pub const GRID_POINTS: usize = 2001;

fn random_matrix(rng: &mut SeededRng, lo: usize, hi: usize) -> DenseMatrix {
    let rows = rng.random_range(lo..=hi);
    let cols = rng.random_range(lo..=hi);
    DenseMatrix::random_normal(rows, cols, rng.random())
}

/// Smallest `||W - (g1 S1 + g2 S2)||_F` over the family with stable rank
/// exactly `r`, where `S1` holds the top triplet and `S2` the rest.
/// `g2` runs over a uniform grid on `[0, 2]`; for each value both solutions
/// for `g1` (top singular value from `S1` or from `S2`) are tried.
pub fn family_grid_min(sigmas: &[f64], r: f64) -> f64 {
    let s1 = sigmas[0];
    let e1 = s1 * s1;
    let e2: f64 = sigmas[1..].iter().map(|s| s * s).sum();
    let t1 = sigmas.get(1).copied().unwrap_or(0.0);
    let dist = |g1: f64, g2: f64| ((1.0 - g1).powi(2) * e1 + (1.0 - g2).powi(2) * e2).sqrt();
    let mut best = f64::INFINITY;
    for i in 0..GRID_POINTS {
        let g2 = 2.0 * i as f64 / (GRID_POINTS - 1) as f64;
        // S1 carries the top singular value
        if r * e1 > e1 {
            let g1 = g2 * (e2 / (r * e1 - e1)).sqrt();
            if g1 * s1 >= g2 * t1 && g1 > 0.0 {
                best = best.min(dist(g1, g2));
            }
        }
        // S2 carries it
        let num = r * t1 * t1 - e2;
        if num >= 0.0 && g2 > 0.0 {
            let g1 = g2 * (num / e1).sqrt();
            if g2 * t1 >= g1 * s1 {
                best = best.min(dist(g1, g2));
            }
        }
    }
    best
}

/// Distance of a feasible competitor that keeps the top `k` triplets and
/// rescales the tail singular values nonuniformly so the stable rank is
/// `r`. `None` when the rescaled tail would overtake `sigma_1`.
fn tail_competitor(sigmas: &[f64], k: usize, r: f64, rng: &mut SeededRng) -> Option<f64> {
    let s1 = sigmas[0];
    let e1: f64 = sigmas[..k].iter().map(|s| s * s).sum();
    let budget = r * s1 * s1 - e1;
    let tail = &sigmas[k..];
    if tail.is_empty() || budget < 0.0 {
        return None;
    }
    let shaped: Vec<f64> = tail
        .iter()
        .map(|s| s * rng.random_range(0.5..1.5))
        .collect();
    let energy: f64 = shaped.iter().map(|s| s * s).sum();
    if energy == 0.0 {
        return None;
    }
    let a = (budget / energy).sqrt();
    let new: Vec<f64> = shaped.iter().map(|s| s * a).collect();
    if new.iter().any(|&s| s > s1) {
        return None;
    }
    Some(
        tail.iter()
            .zip(&new)
            .map(|(s, t)| (s - t).powi(2))
            .sum::<f64>()
            .sqrt(),
    )
}

fn theorem1(n: usize, seed: u64, opts: &PowerOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(
        Suite::Theorem1,
        &[
            "target_srank",
            "spectrum_preserved",
            "gamma_order",
            "optimal_vs_family_grid",
            "optimal_vs_tail_competitors",
            "feasibility_condition",
            "identity_above_srank",
        ],
    );
    for case in 0..n {
        let mut rng = substream(seed, case as u64);
        let w = random_matrix(&mut rng, 2, 12);
        let svd = full_svd_oracle(&w)?;
        let sig = svd.sigmas();
        let srank = svd.stable_rank();
        rep.cases += 1;
        for r in [1.5, 2.5, 0.6 * srank] {
            for k in 0..=w.min_dim().min(3) {
                let cfg = SrnConfig::with_rank(r.max(1.0), k)?;
                let r = r.max(1.0);
                let res = srn_optimal(&w, &cfg, opts);
                let bound = sig[..k.max(1)].iter().map(|s| s * s).sum::<f64>() / (sig[0] * sig[0]);
                if r >= srank {
                    if let Ok((out, _)) = &res {
                        rep.record("identity_above_srank", out == &w, &w);
                    }
                    continue;
                }
                if k >= 1 && (r - bound).abs() > 1e-9 * bound {
                    rep.record(
                        "feasibility_condition",
                        matches!(res, Err(Error::Infeasible { .. })) == (r < bound),
                        &w,
                    );
                }
                let Ok((out, report)) = res else { continue };
                if !report.feasible {
                    continue;
                }
                let out_svd = full_svd_oracle(&out)?;
                rep.record("target_srank", (out_svd.stable_rank() - r).abs() <= TOL, &w);
                rep.record(
                    "gamma_order",
                    report.gamma2 <= 1.0 + 1e-12 && report.gamma1 >= 1.0 - 1e-12,
                    &w,
                );
                let dist = frobenius_norm(&(&w - &out));
                if k >= 1 {
                    let o = out_svd.sigmas();
                    let ok = (0..k).all(|i| (o[i] - sig[i]).abs() <= TOL * sig[0].max(1.0));
                    rep.record("spectrum_preserved", ok, &w);
                    let mut ok = true;
                    for _ in 0..32 {
                        if let Some(d) = tail_competitor(&sig, k, r, &mut rng) {
                            ok &= dist <= d + 1e-7;
                        }
                    }
                    rep.record("optimal_vs_tail_competitors", ok, &w);
                } else {
                    rep.record(
                        "optimal_vs_family_grid",
                        dist <= family_grid_min(&sig, r) + 1e-7,
                        &w,
                    );
                }
            }
        }
    }
    Ok(rep)
}

fn claim1(n: usize, seed: u64, opts: &PowerOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(
        Suite::Claim1,
        &[
            "target_srank",
            "top_l_preserved",
            "matches_optimal_when_l_eq_k",
        ],
    );
    for case in 0..n {
        let mut rng = substream(seed, case as u64);
        let w = random_matrix(&mut rng, 3, 12);
        let svd = full_svd_oracle(&w)?;
        let sig = svd.sigmas();
        let srank = svd.stable_rank();
        let r = 1.0 + rng.random::<f64>() * (srank - 1.0);
        let k = rng.random_range(1..=w.min_dim().min(4));
        rep.cases += 1;
        let (out, report) = srn_greedy(&w, r, k, opts)?;
        let out_svd = full_svd_oracle(&out)?;
        rep.record("target_srank", (out_svd.stable_rank() - r).abs() <= TOL, &w);
        let o = out_svd.sigmas();
        let l = report.achieved_l;
        rep.record(
            "top_l_preserved",
            (0..l).all(|i| (o[i] - sig[i]).abs() <= TOL * sig[0].max(1.0)),
            &w,
        );
        if l == k {
            let (opt, _) = srn_optimal(&w, &SrnConfig::with_rank(r, k)?, opts)?;
            rep.record(
                "matches_optimal_when_l_eq_k",
                opt.max_abs_diff(&out) <= 1e-8 * frobenius_norm(&w),
                &w,
            );
        }
    }
    Ok(rep)
}

fn monotonicity(n: usize, seed: u64, opts: &PowerOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(
        Suite::Monotonicity,
        &["nondecreasing_in_k", "k0_not_above_k1"],
    );
    for case in 0..n {
        let mut rng = substream(seed, case as u64);
        let rows = rng.random_range(5..=10);
        let cols = rng.random_range(5..=10);
        let p = rows.min(cols);
        // well separated, decreasing spectrum
        let mut sig: Vec<f64> = (0..p)
            .map(|i| (p - i) as f64 + rng.random_range(0.1..0.9))
            .collect();
        sig.iter_mut().for_each(|s| *s *= 0.5);
        let w = DenseMatrix::with_spectrum(rows, cols, &sig, rng.random())?;
        let e = |k: usize| sig[..k].iter().map(|s| s * s).sum::<f64>() / (sig[0] * sig[0]);
        let srank = e(p);
        let lo = e(4);
        let r = lo + rng.random_range(0.05..0.95) * (srank - lo);
        rep.cases += 1;
        let mut dists = Vec::new();
        for k in 0..=4 {
            let (_, report) = srn_optimal(&w, &SrnConfig::with_rank(r, k)?, opts)?;
            dists.push(report.frobenius_distance);
        }
        let slack = 1e-9 * frobenius_norm(&w);
        rep.record(
            "nondecreasing_in_k",
            dists[1..].windows(2).all(|d| d[0] <= d[1] + slack),
            &w,
        );
        rep.record("k0_not_above_k1", dists[0] <= dists[1] + slack, &w);
    }
    Ok(rep)
}

/// Monte Carlo draws per point in the noise suite.
pub const NOISE_SAMPLES: usize = 20_000;

fn noise(n: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(
        Suite::Noise,
        &["phi_at_least_srank", "top_vector_matches_srank"],
    );
    for case in 0..n {
        let mut rng = substream(seed, case as u64);
        let w = random_matrix(&mut rng, 2, 6);
        let svd = full_svd_oracle(&w)?;
        let srank = svd.stable_rank();
        let mut points: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..w.cols()).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let f = LinearMap(w.clone());
        rep.cases += 1;
        let ns = noise_sensitivity(&f, &points, NOISE_SAMPLES, rng.random())?;
        rep.record(
            "phi_at_least_srank",
            ns.phi >= srank - 3.0 * ns.std_errors[ns.argmax],
            &w,
        );
        points.truncate(0);
        points.push(svd.triplets[0].v.clone());
        let top = noise_sensitivity(&f, &points, NOISE_SAMPLES, rng.random())?;
        rep.record(
            "top_vector_matches_srank",
            (top.phi - srank).abs() <= 3.0 * top.std_errors[0],
            &w,
        );
    }
    Ok(rep)
}

fn lipschitz(n: usize, seed: u64, opts: &PowerOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(
        Suite::Lipschitz,
        &["global_below_layer_product", "local_bounds_global"],
    );
    for case in 0..n {
        let mut rng = substream(seed, case as u64);
        let d = rng.random_range(2..=6);
        let h = rng.random_range(4..=12);
        let c = rng.random_range(2..=4);
        let model = MlpModel::random(&[d, h, h, c], rng.random())?;
        let w0 = model.layers()[0].weight.clone();
        let gauss = |rng: &mut SeededRng| -> Vec<f64> {
            (0..d).map(|_| rng.sample(StandardNormal)).collect()
        };
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
            .map(|_| (gauss(&mut rng), gauss(&mut rng)))
            .collect();
        rep.cases += 1;
        let global = empirical_lip_global(&model, &pairs, 2.0, 2.0)?;
        let bound = lip_upper_bound(model.weights(), opts)?;
        rep.record("global_below_layer_product", global <= bound + 1e-6, &w0);
        let points: Vec<Vec<f64>> = (0..8).map(|_| gauss(&mut rng)).collect();
        let chk = check_local_global(&model, &points, 16, rng.random(), opts)?;
        rep.record("local_bounds_global", chk.holds, &w0);
    }
    Ok(rep)
}
