use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Nodule has no usable diameter and must be dropped from ratio analyses.
    #[error("nodule excluded from ratio analysis: estimated diameter {diameter_mm} mm")]
    ExcludedNodule { diameter_mm: f64 },

    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("detections line {line}: {message}")]
    Detections { line: u64, message: String },

    #[error("configuration: {0}")]
    Config(String),

    /// A statistic was requested for a cell with no outcomes.
    #[error("empty cell: no outcomes to estimate from")]
    EmptyCell,

    #[error("no consensus nodules: no cluster reached the {min_readers}-reader consensus threshold")]
    EmptyConsensus { min_readers: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyConsensus { .. } => 2,
            _ => 1,
        }
    }
}
