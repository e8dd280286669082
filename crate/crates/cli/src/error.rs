use thiserror::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<boop_core::Error> for CliError {
    fn from(e: boop_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

/// Output files count as data: an unwritable output directory is reported like an
/// unreadable input.
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
