use std::path::PathBuf;

use thiserror::Error;

use crate::linalg::SingularTriplet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is zero (Frobenius norm 0)")]
    ZeroMatrix,

    #[error(
        "power iteration did not converge after {iterations} sweeps (residual {residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Last iterate; sigma is usually accurate even when the vectors are not.
        best: Box<SingularTriplet>,
    },

    #[error("dimension {dim} exceeds the reference SVD cap of {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible: r = {target} < ||S1||_F^2 / sigma1^2 = {bound}")]
    Infeasible { target: f64, bound: f64 },

    #[error("target stable rank {target} is not below the current stable rank {srank}")]
    TargetNotBelowStableRank { target: f64, srank: f64 },

    #[error("pair {index} has identical inputs")]
    DegeneratePair { index: usize },

    #[error("function output is zero at input {index}")]
    ZeroOutput { index: usize },

    #[error("margin is zero")]
    ZeroMargin,

    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn mismatch(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
