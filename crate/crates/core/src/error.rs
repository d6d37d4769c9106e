use thiserror::Error;

/// Errors raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown option identifier `{0}`")]
    UnknownOption(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no judgments for sentence `{0}`")]
    NoJudgments(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("unknown worker `{0}`")]
    UnknownWorker(String),

    #[error("missing predictions for sentences: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("missing sentence-relation scores for sentences: {}", .0.join(", "))]
    MissingScores(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn row(line: u64, message: impl Into<String>) -> Self {
        Error::Row {
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Row { .. } => "malformed_row",
            Error::Schema(_) => "schema",
            Error::UnknownOption(_) => "unknown_option",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NoJudgments(_) => "no_judgments",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UnknownWorker(_) => "unknown_worker",
            Error::MissingPredictions(_) => "missing_predictions",
            Error::MissingScores(_) => "missing_scores",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
