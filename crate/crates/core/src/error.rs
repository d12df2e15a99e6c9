use std::path::PathBuf;

use thiserror::Error;

use crate::flat_vehicle::FlatError;
use crate::policy::PolicyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("out of domain: {0}")]
    Domain(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("horizon: frame {frame} needs {needed} future frames but scenario has {len} frames")]
    Horizon { frame: usize, needed: usize, len: usize },

    #[error(transparent)]
    Flat(#[from] FlatError),

    #[error(transparent)]
    Policy(#[from] PolicyError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INVALID_INPUT",
            Error::Domain(_) => "E_DOMAIN",
            Error::Solver(_) => "E_SOLVER",
            Error::Parse { .. } => "E_PARSE",
            Error::Horizon { .. } => "E_HORIZON",
            Error::Flat(_) => "E_FLAT",
            Error::Policy(_) => "E_POLICY",
            Error::Io { .. } => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}
