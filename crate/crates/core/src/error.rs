// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

use crate::dataset::Violation;

/// Result alias with [`Error`].
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("checksum mismatch in {file}: manifest says {expected:08x}, file has {actual:08x}")]
    Checksum {
        file: String,
        expected: u32,
        actual: u32,
    },

    #[error("shape mismatch in {file}: expected {expected} bytes, found {actual}")]
    Shape {
        file: String,
        expected: usize,
        actual: usize,
    },

    #[error("{file}: row {row} is not a probability vector ({detail})")]
    Probability {
        file: String,
        row: usize,
        detail: String,
    },

    #[error("dataset failed validation with {} violation(s): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),

    #[error("degenerate restriction: no probability mass on the token set")]
    DegenerateRestriction,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("layer {0} not present in dataset")]
    MissingLayer(usize),

    #[error("missing payload: {0}")]
    MissingPayload(String),

    #[error("empty training split")]
    EmptyTrainSplit,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .take(5)
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }
}
