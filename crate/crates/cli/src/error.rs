use statlap_core::StatlapError;

/// Failures of a pipeline run, each with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure in {check}: {message}")]
    Numerical { check: String, message: String },
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Classify a core error raised while building inputs from the config:
    /// bad parameters and shapes are configuration errors.
    pub fn from_setup(err: StatlapError) -> Self {
        match err {
            StatlapError::Io(e) => CliError::Io(e.to_string()),
            StatlapError::SingularMetric { .. } => CliError::Numerical { check: "setup".into(), message: err.to_string() },
            other => CliError::Config(other.to_string()),
        }
    }

    /// Classify a core error raised during computation.
    pub fn numerical(check: &str, err: StatlapError) -> Self {
        match err {
            StatlapError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Numerical { check: check.into(), message: other.to_string() },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
