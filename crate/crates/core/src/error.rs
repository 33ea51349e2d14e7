use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("phase protocol violation: {0}")]
    Protocol(String),
    #[error("grid resolution error: {0}")]
    Resolution(String),
    #[error("solver setup error: {0}")]
    Setup(String),
    #[error("degenerate result: {0}")]
    Degenerate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short identifier used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Domain(_) => "domain",
            Error::Protocol(_) => "protocol",
            Error::Resolution(_) => "resolution",
            Error::Setup(_) => "setup",
            Error::Degenerate(_) => "degenerate",
            Error::Unsupported(_) => "unsupported",
            Error::Param(_) => "param",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
