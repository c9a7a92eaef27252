use std::path::PathBuf;

use rhino_core::CoreError;
use rhino_kernel::KernelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Kernel(#[from] KernelError),

    /// Bad input file content; `row` is 1-based and counts the header.
    #[error("ingest error in {path} at row {row}: {detail}")]
    Ingest { path: PathBuf, row: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        HarnessError::Csv {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        HarnessError::Json {
            path: path.into(),
            source,
        }
    }

    /// Stable category name used in the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Core(CoreError::Config(_)) | HarnessError::Config(_) => "config",
            HarnessError::Core(CoreError::Dimension(_)) | HarnessError::Dimension(_) => "dimension",
            HarnessError::Core(_) => "model",
            HarnessError::Kernel(_) => "kernel",
            HarnessError::Ingest { .. } => "ingest",
            HarnessError::Io { .. } | HarnessError::Csv { .. } | HarnessError::Json { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
