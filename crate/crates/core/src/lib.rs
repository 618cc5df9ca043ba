//! Stable rank normalization (SRN) of dense linear operators.
//!
//! * [`linalg`]: dense matrices, power iteration with deflation, a Jacobi
//!   reference SVD.
//! * [`normalize`]: optimal and greedy SRN, spectral normalization and
//!   clipping, rank truncation, and the per-layer training step.
//! * [`measures`]: noise sensitivity, empirical Lipschitz constants and
//!   histograms, margins and margin-normalized complexity measures.
//! * [`nn`]: a small dense ReLU network trained by SGD with optional
//!   spectral / stable rank normalization of every layer.
//! * [`matfile`]: the `srnmat` text format and model snapshots.
//! * [`verify`]: seeded property suites over the normalization results.

pub mod error;
pub mod fmt;
pub mod linalg;
pub mod matfile;
pub mod measures;
pub mod nn;
pub mod normalize;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{
    frobenius_norm, full_svd_oracle, numerical_rank, power_iteration, stable_rank, top_k_svd,
    DenseMatrix, PowerOptions, SingularTriplet, SvdResult,
};
pub use normalize::{
    spectral_clip_counted, spectral_clip_optimal, spectral_normalize_approx, srn_greedy,
    srn_layer_step, srn_optimal, truncate_rank, NormalizationReport, SrnConfig,
};
