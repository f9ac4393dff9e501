use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image pair: {0}")]
    InvalidPair(String),

    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    Range { index: usize, value: f64 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid augmentation: {0}")]
    InvalidAugmentation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("failed to load tensor `{tensor}`: {reason}")]
    TensorLoad { tensor: String, reason: String },

    #[error("architecture mismatch: checkpoint {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },

    #[error("duplicate pair id `{0}` in manifest")]
    DuplicatePairId(String),

    #[error("{0} split is empty")]
    EmptySplit(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pair `{pair_id}`: {source}")]
    Sample {
        pair_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step} (epoch {epoch}): {reason}; batch [{batch}]")]
    Diverged { step: u64, epoch: u64, batch: String, reason: String },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// I/O failure on `path`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by input data (files, manifests, image
    /// contents) rather than by the computation itself.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::InvalidPair(_)
            | Error::Range { .. }
            | Error::InvalidImage(_)
            | Error::Manifest { .. }
            | Error::DuplicatePairId(_)
            | Error::EmptySplit(_)
            | Error::Image { .. }
            | Error::TensorLoad { .. }
            | Error::ArchitectureMismatch { .. }
            | Error::Checkpoint { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Sample { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
