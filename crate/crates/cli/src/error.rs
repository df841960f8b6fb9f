use std::path::PathBuf;

use opcal::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] opcal::Error),

    #[error("{0}")]
    Config(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Cell {
        path: String,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Engine(e) => e.class(),
            CliError::Config(_) => ErrorClass::Config,
            CliError::Cell { .. } | CliError::Input { .. } | CliError::Io { .. } => ErrorClass::Data,
        }
    }

    /// 2 for configuration, 3 for data, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
