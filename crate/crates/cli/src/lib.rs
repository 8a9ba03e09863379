//! Command-line front end and HTTP service for the `oppchain` explainer.

pub mod commands;
pub mod service;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] oppchain::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "InvalidArgument",
            CliError::Io(_) => "Io",
        }
    }

    /// The one-line JSON form written to stderr.
    pub fn to_line(&self) -> String {
        json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
