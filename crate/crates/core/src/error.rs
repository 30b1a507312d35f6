//! Library error type. Every variant maps to a stable machine-readable code
//! used by the CLI's single-line error output.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty scene")]
    EmptyScene,

    #[error("empty point cloud")]
    EmptyPointCloud,

    #[error("empty level set")]
    EmptyLevelSet,

    #[error("iso-surface not found: only {surviving} points projected onto the zero set")]
    IsoSurfaceNotFound { surviving: usize },

    #[error("degenerate gradient at iterate (|J| < 1e-9)")]
    DegenerateGradient,

    #[error("training diverged at step {step}: total loss is not finite")]
    Diverged { step: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
}

impl Error {
    /// Stable kebab-case code for machine parsing.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyScene => "empty-scene",
            Error::EmptyPointCloud => "empty-point-cloud",
            Error::EmptyLevelSet => "empty-level-set",
            Error::IsoSurfaceNotFound { .. } => "iso-surface-not-found",
            Error::DegenerateGradient => "degenerate-gradient",
            Error::Diverged { .. } => "diverged",
            Error::NonFinite(_) => "non-finite",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::InvalidConfig(_) => "invalid-config",
            Error::IndexOutOfRange(_) => "index-out-of-range",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::MalformedFile { .. } => "malformed-file",
        }
    }
}
