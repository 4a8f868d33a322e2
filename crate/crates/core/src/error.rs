//! Crate-wide error type.
//!
//! Errors are grouped by what went wrong rather than where: configuration
//! problems (bad shapes, invalid hyperparameters), data problems (malformed
//! files, missing entries), numeric failures (non-finite values), and I/O.
//! The CLI maps these groups onto distinct process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: incompatible shapes, bad hyperparameters,
    /// unknown identifiers.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (files parse but their content
    /// is unusable, entries are missing, headers do not match).
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced NaN or infinity where finite values are
    /// required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying file-system failure.
    #[error("io error: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
