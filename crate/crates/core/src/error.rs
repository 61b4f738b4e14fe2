use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("function is not deterministic: two evaluations at the same point disagree")]
    NonDeterministic,

    #[error("STFT configuration violates COLA: {0}")]
    Cola(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("checkpoint version error: {0}")]
    CheckpointVersion(String),

    #[error("checkpoint kind mismatch: file holds `{found}`, expected `{expected}`")]
    CheckpointKind { expected: String, found: String },

    #[error("checkpoint parameter inventory mismatch: {0}")]
    CheckpointInventory(String),

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("unsupported audio format: {0}")]
    AudioFormat(String),

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("WAV error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in file handling rather than math.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Wav { .. }
                | Error::CheckpointVersion(_)
                | Error::CheckpointCorrupt(_)
                | Error::CheckpointKind { .. }
                | Error::CheckpointInventory(_)
                | Error::AudioFormat(_)
        )
    }
}
