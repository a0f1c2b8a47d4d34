use std::path::PathBuf;

use crate::model::AnatomicGroup;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("label out of range: {0}")]
    Range(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("invalid probability vector: {0}")]
    Probability(String),

    #[error("insufficient samples to fit {group} statistics: {detail}")]
    InsufficientSamples { group: AnatomicGroup, detail: String },

    #[error("unsupported NRRD field `{field}`: {detail}")]
    UnsupportedNrrd { field: String, detail: String },

    #[error("{path}:{line}: field `{field}`: {detail}")]
    Schema {
        path: String,
        line: usize,
        field: String,
        detail: String,
    },

    #[error("oracle protocol violation: {0}")]
    Oracle(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(
        path: impl Into<String>,
        line: usize,
        field: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Schema {
            path: path.into(),
            line,
            field: field.into(),
            detail: detail.into(),
        }
    }
}
