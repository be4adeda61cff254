use thiserror::Error;

/// Errors raised by the algebra, algorithm and recovery layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("algebra mismatch: {left} vs {right}")]
    AlgebraMismatch { left: String, right: String },

    #[error("invalid algebra: {0}")]
    InvalidAlgebra(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular element (min |eigenvalue| = {min_abs_eigenvalue:e})")]
    Singular { min_abs_eigenvalue: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("rank-deficient design: {0}")]
    Rank(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("recovery failed at stage {stage}: {detail}")]
    Recovery { stage: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
