use thiserror::Error;

/// Errors raised by the calibration engine.
///
/// Variants are grouped into three classes (configuration, data, numeric)
/// which the command line maps onto distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("no convergence in {context} after {iterations} iterations (component {component:?})")]
    NoConvergence {
        context: String,
        iterations: usize,
        component: Option<usize>,
    },

    #[error("numerical failure: {0}")]
    Numeric(String),
}

/// Error class used for exit codes and binding error mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn dimension(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } => ErrorClass::Config,
            Error::Dimension { .. } | Error::NonFinite { .. } | Error::Data(_) => ErrorClass::Data,
            Error::NoConvergence { .. } | Error::Numeric(_) => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
