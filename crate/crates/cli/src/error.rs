use esfma::ErrorKind;
use thiserror::Error;

/// Errors surfaced by the front end, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    /// 1 for input and I/O problems, 2 for numerical failures, 3 for bad
    /// configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl From<esfma::Error> for CliError {
    fn from(e: esfma::Error) -> Self {
        let msg = e.to_string();
        match e.kind() {
            ErrorKind::Input => CliError::Input(msg),
            ErrorKind::Numerical => CliError::Numerical(msg),
            ErrorKind::Config => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
