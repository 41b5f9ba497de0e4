//! Library side of the `iuzawa` binary: configuration, subcommands and the
//! property suites behind `iuzawa verify`.

pub mod commands;
pub mod config;
pub mod verify;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Runtime(_) => 1,
            CliError::Verification(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

impl From<iuzawa_core::Error> for CliError {
    fn from(e: iuzawa_core::Error) -> Self {
        match e {
            iuzawa_core::Error::Io(_) | iuzawa_core::Error::Format(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<iuzawa_net::Error> for CliError {
    fn from(e: iuzawa_net::Error) -> Self {
        match e {
            iuzawa_net::Error::Config(_) => CliError::Usage(e.to_string()),
            iuzawa_net::Error::Core(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
