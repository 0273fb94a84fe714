use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, missing or malformed input files.
    Input,
    /// Dimension or length disagreement between inputs.
    Shape,
    /// Non-finite values or degenerate geometry encountered during compute.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("unsupported dtype code {code} in {path}")]
    UnsupportedDtype { path: PathBuf, code: u32 },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("degenerate vector (norm {norm:e} below 1e-12)")]
    DegenerateVector { norm: f64 },

    #[error("row {row} has degenerate norm {norm:e}")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("ensemble features cancel at row {row} (norm of sum {norm:e})")]
    DegenerateSum { row: usize, norm: f64 },

    #[error("label {label} at index {index} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        num_classes: u32,
    },

    #[error("class {class} has no examples in the fitting split")]
    DegenerateClass { class: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite gradient at flat index {index}")]
    NonFiniteGradient { index: usize },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::UnsupportedDtype { .. }
            | Error::Truncated { .. }
            | Error::LabelOutOfRange { .. }
            | Error::DegenerateClass { .. }
            | Error::InvalidConfig(_)
            | Error::Manifest { .. } => ErrorKind::Input,
            Error::ShapeMismatch { .. } => ErrorKind::Shape,
            Error::NonFinite { .. }
            | Error::DegenerateVector { .. }
            | Error::DegenerateRow { .. }
            | Error::DegenerateSum { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFiniteGradient { .. } => ErrorKind::Numerical,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(
        context: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
