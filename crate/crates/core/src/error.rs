use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("raster shape invalid: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("instance id {instance} overflows label divisor {divisor}")]
    EncodingOverflow { instance: u32, divisor: u32 },

    #[error("stuff class {class} cannot carry instance id {instance}")]
    InvalidCombination { class: u32, instance: u32 },

    #[error("panoptic id {id} decodes to unknown class {class}")]
    InvalidId { id: u32, class: u32 },

    #[error("center of mass of an empty instance")]
    EmptyInstance,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

/// Parse and validation failures of the `.ptns` tensor container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("bad magic: expected \"PTNS\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}")]
    BadVersion(u32),

    #[error("unknown dtype code {0}")]
    BadDtype(u8),

    #[error("unsupported rank {0} (expected 1..=3)")]
    BadRank(u8),

    #[error("dimension {axis} is zero")]
    EmptyDimension { axis: usize },

    #[error("truncated {field}: need {needed} bytes, have {available}")]
    Truncated {
        field: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("bool payload byte {value} at element {index} is not 0 or 1")]
    BadBool { index: usize, value: u8 },

    #[error("payload has {actual} elements, dims imply {expected}")]
    PayloadLength { expected: usize, actual: usize },

    #[error("expected {expected}, found {found}")]
    WrongKind {
        expected: &'static str,
        found: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
