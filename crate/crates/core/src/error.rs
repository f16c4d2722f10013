use thiserror::Error;

/// Errors raised by geometry, kernel evaluation and the samplers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("point {0} lies in the cut locus of the base point")]
    CutLocus(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("unsupported manifold kind for {0}")]
    UnsupportedKind(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("no truncation level up to {max_level} reaches accuracy {zeta:e}; use the Varadhan oracle")]
    NoTruncationLevel { max_level: usize, zeta: f64 },

    #[error("rejection cap {cap} exceeded (measured acceptance {acceptance:e})")]
    RejectionCapExceeded { cap: u64, acceptance: f64 },

    #[error("truncated heat kernel is non-positive ({0:e})")]
    KernelNonPositive(f64),

    #[error("unclipped acceptance ratio {0} exceeds one")]
    AcceptanceExceedsOne(f64),

    #[error("chain diverged at iteration {0}")]
    Diverged(usize),

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("grid mismatch: {0} vs {1} bins")]
    GridMismatch(usize, usize),

    #[error("config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl Error {
    /// Whether the error stems from user input rather than a numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::DimensionMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
