use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    DegenerateStat,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed npy: {reason}", path.display())]
    MalformedNpy { path: PathBuf, reason: String },

    #[error("{}: {reason}", path.display())]
    InvalidArray { path: PathBuf, reason: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("invalid perturbation spec `{id}`: {reason}")]
    InvalidSpec { id: String, reason: String },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{0}")]
    Invalid(String),

    #[error("degenerate reference: no foreground pixels in the unperturbed prediction")]
    DegenerateReference,

    #[error("missing score for (model={model}, image={image}, perturbation={perturbation})")]
    MissingCell {
        model: String,
        image: String,
        perturbation: String,
    },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ErrorClass::Io,
            Error::UndefinedCorrelation(_) => ErrorClass::DegenerateStat,
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
