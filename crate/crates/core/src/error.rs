//! Crate-wide error type.
//!
//! Two broad classes matter to callers: configuration/validation problems
//! (bad config files, malformed inputs, contract violations — CLI exit
//! code 2) and runtime failures (I/O, numeric blow-ups — CLI exit code 1).

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (schema errors, bad fields).
    #[error("config error: {0}")]
    Config(String),

    /// Invalid input data or arguments (contract violations).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Filesystem failure with the offending path attached.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Numeric failure at runtime (non-finite loss, degenerate solve).
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) => 2,
            Error::Io { .. } | Error::Numeric(_) => 1,
        }
    }

    /// Convenience adapter for `map_err` on filesystem calls.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
