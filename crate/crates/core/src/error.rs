use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("audio buffer is empty")]
    EmptyAudio,
    #[error("audio has {len} samples, at least {needed} are required")]
    AudioTooShort { len: usize, needed: usize },
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("non-positive filterbank energy {value} in channel {channel}")]
    NonPositiveEnergy { channel: usize, value: f64 },
    #[error("cannot split {n_frames} frames into {n_segments} segments")]
    TooFewFrames { n_frames: usize, n_segments: usize },

    #[error("observation sequence is empty")]
    EmptyObservation,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training data is missing cell {0}")]
    MissingCell(String),
    #[error("unknown label: {0}")]
    UnknownLabel(String),
    #[error("registry was trained without ablation model sets")]
    AblationModelsMissing,

    #[error("parse error: {0}")]
    Parse(String),
    #[error("manifest invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { expected: u32, found: u32 },

    #[error("no results to evaluate")]
    EmptyEvaluation,
    #[error("class {0} has no test utterances")]
    UndefinedColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by missing or malformed data on disk rather
    /// than by the caller's configuration.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse(_)
                | Error::UnsupportedFormat { .. }
                | Error::FormatVersion { .. }
                | Error::Serialization(_)
                | Error::InvariantViolation(_)
        )
    }
}
