use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("training did not reach its target: {0}")]
    NotConverged(String),
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("missing class labels: {0}")]
    MissingLabels(String),
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("row {row} is not a probability distribution")]
    InvalidDistribution { row: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("schema version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("component type mismatch: expected {expected}, found {found}")]
    ComponentType { expected: String, found: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("image codec: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
