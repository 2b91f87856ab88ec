use thiserror::Error;

/// CLI failure, carrying the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::GradCheck(_) => 4,
        }
    }
}

impl From<metalink::Error> for CliError {
    fn from(e: metalink::Error) -> Self {
        use metalink::Error as E;
        match e {
            E::Config(_) | E::Parse { .. } | E::Range(_) | E::Generation(_) => CliError::Config(e.to_string()),
            E::Io { .. } | E::Serde(_) => CliError::Io(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub fn io_error(what: &str, path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("cannot {what} {}: {e}", path.display()))
}
