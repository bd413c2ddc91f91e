use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Malformed config text.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Well-formed config with an invalid or missing key.
    #[error("invalid config key `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("metric: {0}")]
    Metric(String),
    #[error("run {run_id}: {source}")]
    Run {
        run_id: String,
        source: scorekit::Error,
    },
    #[error(transparent)]
    Core(#[from] scorekit::Error),
    #[error("grid: {0}")]
    Grid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

impl HarnessError {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse { .. } | HarnessError::Validation { .. } => 2,
            HarnessError::Core(scorekit::Error::NumericalDivergence { .. })
            | HarnessError::Run {
                source: scorekit::Error::NumericalDivergence { .. },
                ..
            } => 3,
            HarnessError::Grid(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
