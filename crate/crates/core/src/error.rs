use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("privacy budget exceeded by `{label}`: requested {requested}, remaining {remaining}")]
    Budget {
        label: String,
        requested: f64,
        remaining: f64,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("budget audit failed: {0}")]
    Audit(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DpError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DpError::Parameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DpError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DpError>;
