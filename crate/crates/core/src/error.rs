//! Crate-wide error type.
//!
//! Each module owns a focused error enum; [`Error`] wraps them so callers
//! that orchestrate several modules (the CLI, the report runner, the FFI
//! layer) can carry one type and still recover which module failed.

use thiserror::Error;

use crate::benchmarks::BenchError;
use crate::derivatives::DerivativeError;
use crate::ingest::IngestError;
use crate::ram::RamError;
use crate::registry::RegistryError;
use crate::series::SeriesError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Derivatives(#[from] DerivativeError),
    #[error(transparent)]
    Ram(#[from] RamError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("report: {0}")]
    Report(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short tag naming the module that produced the error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Registry(_) => "registry",
            Error::Ingest(_) => "ingest",
            Error::Series(_) => "series",
            Error::Derivatives(_) => "derivatives",
            Error::Ram(_) => "ram",
            Error::Bench(_) => "benchmarks",
            Error::Report(_) | Error::Io { .. } => "report",
            Error::Usage(_) => "cli",
        }
    }

    /// Process exit status for this error: 2 for usage problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
