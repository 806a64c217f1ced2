//! Error type shared by all solver stages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate simplex: volume {0:.3e} below tolerance")]
    DegenerateElement(f64),

    #[error("matrix is not symmetric (deviation {0:.3e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular interior block in subdomain {0} (indexing bug)")]
    SingularInterior(usize),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("PCG breakdown: {0}")]
    PcgBreakdown(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("report serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
