use rcdm_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("output directory is locked: {0}")]
    Locked(String),
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ARTIFACT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    /// Short stable identifier for the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Locked(_) => "locked",
            CliError::ReplayMismatch(_) => "replay-mismatch",
            CliError::Core(e) => match e {
                Error::InvalidRange(_) => "invalid-range",
                Error::ShapeMismatch(_) => "shape-mismatch",
                Error::DimensionMismatch { .. } => "dimension-mismatch",
                Error::IndexOutOfRange(_) => "index-out-of-range",
                Error::Config(_) => "config",
                Error::NonFinite(_) => "non-finite",
                Error::Divergence(_) => "divergence",
                Error::NotConverged(_) => "not-converged",
                Error::DivisionByZero(_) => "division-by-zero",
                Error::Empty(_) => "empty",
                Error::MissingLabels(_) => "missing-labels",
                Error::UnknownId(_) => "unknown-id",
                Error::FingerprintMismatch(_) => "fingerprint-mismatch",
                Error::NotPsd(_) => "not-psd",
                Error::InvalidDistribution { .. } => "invalid-distribution",
                Error::Unsupported(_) => "unsupported",
                Error::Integrity(_) => "integrity",
                Error::VersionMismatch { .. } => "version-mismatch",
                Error::ComponentType { .. } => "component-type",
                Error::MissingArtifact(_) => "missing-artifact",
                Error::Image(_) => "image",
                Error::Io(_) => "io",
                Error::Json(_) => "json",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Locked(_) | CliError::ReplayMismatch(_) => EXIT_ARTIFACT,
            CliError::Core(e) => match e {
                Error::InvalidRange(_)
                | Error::Config(_)
                | Error::Unsupported(_)
                | Error::IndexOutOfRange(_)
                | Error::UnknownId(_)
                | Error::MissingLabels(_) => EXIT_USAGE,
                Error::NonFinite(_)
                | Error::Divergence(_)
                | Error::NotConverged(_)
                | Error::DivisionByZero(_)
                | Error::NotPsd(_)
                | Error::InvalidDistribution { .. } => EXIT_NUMERIC,
                _ => EXIT_ARTIFACT,
            },
        }
    }

    /// `rcdm: error kind=<kind> exit=<code> message=<json string>`
    pub fn reason_line(&self) -> String {
        format!(
            "rcdm: error kind={} exit={} message={}",
            self.kind(),
            self.exit_code(),
            serde_json::Value::String(self.to_string())
        )
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
