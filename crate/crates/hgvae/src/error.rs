//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Top-level error for loading, configuration, training, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: expected {expected} rows for '{entity}', found {found}")]
    ShapeMismatch {
        path: PathBuf,
        entity: String,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: edge endpoint {node_id} out of range for node type '{node_type}' (count {count})")]
    DanglingEdge {
        path: PathBuf,
        line: usize,
        node_id: usize,
        node_type: String,
        count: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numerical divergence: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code class: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
