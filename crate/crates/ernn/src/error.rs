use thiserror::Error;

/// Crate-wide error type.
///
/// Low-level kernels in [`crate::linalg`] treat shape misuse as programmer
/// error and panic; everything that touches files, user configuration, or
/// numerically fallible procedures reports through this enum instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular system: pivot {pivot:e} at row {row} below threshold")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("derivative of the equilibrium map is unbounded at alpha = 0")]
    UnboundedDerivative,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
