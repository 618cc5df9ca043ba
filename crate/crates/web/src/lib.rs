//! Browser bindings for three interactive views: the spectrum before and
//! after stable rank normalization, optimal clipping against uniform
//! scaling, and noise sensitivity before and after normalization.
//!
//! Each exported function takes plain numbers and returns a JSON string;
//! failures come back as `{"error": "..."}`.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use srn_core::measures::{noise_sensitivity, LinearMap};
use srn_core::rng::seeded;
use srn_core::{
    frobenius_norm, full_svd_oracle, spectral_clip_optimal, srn_optimal, DenseMatrix, PowerOptions,
    SrnConfig,
};
use wasm_bindgen::prelude::*;

/// Largest matrix side the page offers.
pub const MAX_DIM: usize = 48;

#[derive(Debug, Serialize)]
pub struct SrnView {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub srank_in: f64,
    pub srank_out: f64,
    pub target: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub fro_dist: f64,
    pub changed: bool,
}

#[derive(Debug, Serialize)]
pub struct ClipView {
    pub input: Vec<f64>,
    pub clipped: Vec<f64>,
    pub scaled: Vec<f64>,
    pub dist_clip: f64,
    pub dist_scaled: f64,
}

/// `phi_max_*` is the worst of several Gaussian points; `phi_top_*` is at
/// the top right singular vector, where the stable rank bound is tight.
#[derive(Debug, Serialize)]
pub struct NoiseView {
    pub srank_before: f64,
    pub srank_after: f64,
    pub phi_max_before: f64,
    pub phi_max_after: f64,
    pub phi_top_before: f64,
    pub phi_top_after: f64,
    pub se_top_before: f64,
    pub se_top_after: f64,
}

fn opts() -> PowerOptions {
    PowerOptions::default().with_max_iter(20_000)
}

/// A seeded matrix with a decaying spectrum, so stable rank moves visibly.
pub fn demo_matrix(rows: usize, cols: usize, decay: f64, seed: u64) -> Result<DenseMatrix, String> {
    if rows == 0 || cols == 0 || rows > MAX_DIM || cols > MAX_DIM {
        return Err(format!("dimensions must lie in 1..={MAX_DIM}"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err("decay must lie in (0, 1]".into());
    }
    let n = rows.min(cols);
    let sigmas: Vec<f64> = (0..n).map(|i| decay.powi(i as i32)).collect();
    DenseMatrix::with_spectrum(rows, cols, &sigmas, seed).map_err(|e| e.to_string())
}

fn sigmas(w: &DenseMatrix) -> Result<Vec<f64>, String> {
    Ok(full_svd_oracle(w).map_err(|e| e.to_string())?.sigmas())
}

fn srank(s: &[f64]) -> f64 {
    s.iter().map(|x| x * x).sum::<f64>() / (s[0] * s[0])
}

pub fn srn_view(w: &DenseMatrix, r: f64, k: usize) -> Result<SrnView, String> {
    let cfg = SrnConfig::with_rank(r, k).map_err(|e| e.to_string())?;
    let (out, rep) = srn_optimal(w, &cfg, &opts()).map_err(|e| e.to_string())?;
    let input = sigmas(w)?;
    let output = sigmas(&out)?;
    Ok(SrnView {
        srank_in: srank(&input),
        srank_out: srank(&output),
        input,
        output,
        target: r,
        gamma1: rep.gamma1,
        gamma2: rep.gamma2,
        fro_dist: rep.frobenius_distance,
        changed: rep.frobenius_distance > 0.0,
    })
}

pub fn clip_view(w: &DenseMatrix, s: f64) -> Result<ClipView, String> {
    let input = sigmas(w)?;
    let clipped = spectral_clip_optimal(w, s, &opts()).map_err(|e| e.to_string())?;
    let scaled = w.scale(s / input[0]);
    Ok(ClipView {
        dist_clip: frobenius_norm(&(w - &clipped)),
        dist_scaled: frobenius_norm(&(w - &scaled)),
        clipped: sigmas(&clipped)?,
        scaled: sigmas(&scaled)?,
        input,
    })
}

/// Noise sensitivity before and after normalizing to stable rank `r` with
/// `k = 1`.
pub fn noise_view(w: &DenseMatrix, r: f64, n_noise: usize, seed: u64) -> Result<NoiseView, String> {
    let cfg = SrnConfig::with_rank(r, 1).map_err(|e| e.to_string())?;
    let (out, _) = srn_optimal(w, &cfg, &opts()).map_err(|e| e.to_string())?;
    let svd = full_svd_oracle(w).map_err(|e| e.to_string())?;
    let mut rng = seeded(seed);
    let mut points: Vec<Vec<f64>> = (0..8)
        .map(|_| {
            (0..w.cols())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    // preserved by k = 1, so it is the top vector of both
    points.push(svd.triplets[0].v.clone());
    let top = points.len() - 1;
    let run = |m: &DenseMatrix| {
        noise_sensitivity(&LinearMap(m.clone()), &points, n_noise, seed).map_err(|e| e.to_string())
    };
    let (before, after) = (run(w)?, run(&out)?);
    Ok(NoiseView {
        srank_before: svd.stable_rank(),
        srank_after: srank(&sigmas(&out)?),
        phi_max_before: before.phi,
        phi_max_after: after.phi,
        phi_top_before: before.per_point[top],
        phi_top_after: after.per_point[top],
        se_top_before: before.std_errors[top],
        se_top_after: after.std_errors[top],
    })
}

fn to_json<T: Serialize>(res: Result<T, String>) -> String {
    match res {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen]
pub fn srn_spectrum(rows: usize, cols: usize, decay: f64, seed: u32, r: f64, k: usize) -> String {
    to_json(demo_matrix(rows, cols, decay, seed as u64).and_then(|w| srn_view(&w, r, k)))
}

#[wasm_bindgen]
pub fn clip_vs_scale(rows: usize, cols: usize, decay: f64, seed: u32, s: f64) -> String {
    to_json(demo_matrix(rows, cols, decay, seed as u64).and_then(|w| clip_view(&w, s)))
}

#[wasm_bindgen]
pub fn noise(rows: usize, cols: usize, decay: f64, seed: u32, r: f64, n_noise: usize) -> String {
    to_json(
        demo_matrix(rows, cols, decay, seed as u64)
            .and_then(|w| noise_view(&w, r, n_noise, seed as u64)),
    )
}
