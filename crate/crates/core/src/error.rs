use thiserror::Error;

/// Errors surfaced by the library. Variants map onto CLI exit codes:
/// configuration problems exit 2, everything else exits 1.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric overflow at iteration {iteration}: {detail}")]
    NumericOverflow { iteration: u64, detail: String },
    #[error("sequencing error: expected iteration {expected}, got {got}")]
    Sequencing { expected: u64, got: u64 },
    #[error("range error: {0}")]
    Range(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("malformed artifact {path}: {detail}")]
    Artifact { path: String, detail: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    /// True for errors caused by the caller's configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, LabError::InvalidConfig(_) | LabError::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
