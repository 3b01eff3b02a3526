use thiserror::Error;

/// Errors produced by the smoothing routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmoothError {
    #[error("invalid axis specification: {0}")]
    InvalidSpec(String),

    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The Gram matrix BᵀB is (numerically) singular; `indices` lists the
    /// basis functions without data support.
    #[error("singular Gram matrix (basis functions {indices:?} lack data support)")]
    SingularGram { indices: Vec<usize> },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("smoothing-parameter grid has {combinations} combinations, limit is {limit}")]
    GridTooLarge { combinations: usize, limit: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("internal consistency failure: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, SmoothError>;
