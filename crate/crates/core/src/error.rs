use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("empty checkpoint")]
    EmptyCheckpoint,
    #[error("invalid tensor name {0:?}")]
    InvalidName(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor {name:?}: shape {shape:?} holds {expected} values but {actual} were given")]
    ShapeLength {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),
    #[error("non-finite value in tensor {name:?} at flat index {index}")]
    NonFinite { name: String, index: usize },

    #[error("bad magic: expected \"SMECKPT1\"")]
    BadMagic,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("tensor {name:?} extent [{offset}, {end}) lies outside the {data_len}-byte data section")]
    OutOfBounds {
        name: String,
        offset: u64,
        end: u64,
        data_len: u64,
    },
    #[error("tensors {first:?} and {second:?} have overlapping extents")]
    Overlap { first: String, second: String },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("non-canonical container: {0}")]
    NonCanonical(String),

    #[error("missing tensors: {}", .0.join(", "))]
    MissingTensors(Vec<String>),
    #[error("shape mismatch for {name:?}: {left:?} vs {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a {expected} checkpoint, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: String,
    },
    #[error("invalid metadata: {0}")]
    InvalidMeta(String),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration has {} problem(s):\n  {}", .0.len(), .0.join("\n  "))]
    ConfigList(Vec<String>),

    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Divergence { epoch: u32, batch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(String),
    #[error("missing stages for {method:?}: {stages:?}")]
    MissingStages { method: String, stages: Vec<usize> },
    #[error("stage {stage} failed after {} completed stage(s): {source}", .completed.len())]
    StageFailed {
        stage: usize,
        completed: Vec<crate::pipeline::StageRecord>,
        #[source]
        source: Box<Error>,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the underlying byte sink/source rather than of the
    /// data itself.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::StageFailed { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
