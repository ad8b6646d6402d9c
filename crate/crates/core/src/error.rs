use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undistortion diverged for input point ({x}, {y})")]
    Divergence { x: f64, y: f64 },

    #[error("motion set is not observable: {0}")]
    Observability(String),

    #[error("numerical failure: {reason} (condition number {condition:e})")]
    Numerical { reason: String, condition: f64 },

    #[error("ray does not intersect the light plane")]
    NoIntersection,

    #[error("intersection lies behind the camera (depth {0} m)")]
    BehindCamera(f64),

    #[error("planes are parallel, no rotation axis exists")]
    NoAxis,

    #[error("no fused velocity sample within sync tolerance (gap {gap} s)")]
    StaleVelocity { gap: f64 },

    #[error("no correspondences survived thresholding")]
    NoOverlap,

    #[error("inconsistent observation: {0}")]
    InconsistentObservation(String),

    #[error("invalid scene specification: {0}")]
    InvalidSpec(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn degenerate(msg: impl Into<String>) -> Error {
    Error::Degenerate(msg.into())
}
