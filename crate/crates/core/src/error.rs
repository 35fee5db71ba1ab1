use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid domain in {op}: {detail}")]
    InvalidDomain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward: {0}")]
    Backward(String),
    #[error("unmeasurable: {0}")]
    Unmeasurable(String),
    #[error("scene: {0}")]
    Scene(String),
    #[error("config mismatch: expected fingerprint {expected}, found {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("format: {0}")]
    Format(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidDomain { .. } => "invalid_domain",
            Error::NonFinite { .. } => "non_finite",
            Error::Geometry { .. } => "geometry",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Backward(_) => "backward",
            Error::Unmeasurable(_) => "unmeasurable",
            Error::Scene(_) => "scene",
            Error::ConfigMismatch { .. } => "config_mismatch",
            Error::Format(_) => "format",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
