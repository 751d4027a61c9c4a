use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while parsing PLY point-cloud files.
#[derive(Debug, Error)]
pub enum PlyError {
    #[error("not a PLY file (missing 'ply' magic)")]
    BadMagic,
    #[error("malformed header at line {line}: {message}")]
    MalformedHeader { line: usize, message: String },
    #[error("unsupported format '{0}' (expected ascii or binary_little_endian)")]
    UnsupportedFormat(String),
    #[error("unsupported property '{name}' of type '{ty}' at header line {line}")]
    UnsupportedProperty { line: usize, name: String, ty: String },
    #[error("vertex element is missing property '{0}'")]
    MissingProperty(&'static str),
    #[error("truncated body: expected {expected} vertices, found {found} (at {location})")]
    Truncated {
        expected: usize,
        found: usize,
        location: String,
    },
    #[error("bad value at line {line}: {message}")]
    BadValue { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate geometry: {reason} (value {value})")]
    DegenerateGeometry { reason: String, value: f64 },
    #[error("invalid disparity {0}: must be positive")]
    InvalidDisparity(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("classifier error on patch {patch_id}: {message}")]
    Classifier { patch_id: usize, message: String },
    #[error("PLY error in {path}: {source}")]
    Ply {
        path: PathBuf,
        #[source]
        source: PlyError,
    },
    #[error("image error in {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class: 1 validation, 2 I/O, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Ply { .. } | Error::Image { .. } => 2,
            Error::Serialization(_) | Error::Classifier { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
