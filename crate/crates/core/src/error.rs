// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by circuitscope.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// Tensor shapes do not agree for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    /// An index (token id, layer, head, position) is outside its bounds.
    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    /// Inconsistent model configuration.
    #[error("invalid model config: {0}")]
    Config(String),

    /// Bad caller-supplied parameter.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A manifest slot had no tensor in the checkpoint file.
    #[error("missing tensor for slot `{slot}` (expected checkpoint name `{name}`)")]
    MissingTensor { slot: String, name: String },

    /// A weight slot was not mapped by the manifest.
    #[error("manifest does not map slot `{0}`")]
    UnmappedSlot(String),

    /// A weight slot was mapped more than once.
    #[error("slot `{0}` is mapped more than once")]
    DuplicateSlot(String),

    /// Manifest refers to a slot name that does not exist.
    #[error("unknown weight slot `{0}`")]
    UnknownSlot(String),

    /// A checkpoint tensor had the wrong shape.
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    /// Checkpoint tensor stored in a dtype we do not read.
    #[error("tensor `{name}` has unsupported dtype {dtype}")]
    UnsupportedDtype { name: String, dtype: String },

    /// The safetensors container could not be parsed or written.
    #[error("safetensors: {0}")]
    SafeTensors(String),

    /// A synthetic circuit does not fit the requested dimensions.
    #[error("capacity violation: {0}")]
    Capacity(String),

    /// A task set would be empty.
    #[error("empty task set: {0}")]
    EmptyTask(String),

    /// Not enough distinct names to build the requested prompts.
    #[error("name pool exhausted: {0}")]
    NamePoolExhausted(String),

    /// A name that should be a single token tokenizes to several.
    #[error("name `{name}` is not a single token (ids {ids:?})")]
    MultiTokenName { name: String, ids: Vec<u32> },

    /// A word is absent from the working vocabulary.
    #[error("word `{0}` is not in the vocabulary")]
    UnknownWord(String),

    /// Generator constraints cannot be satisfied.
    #[error("infeasible task constraints: {0}")]
    Infeasible(String),

    /// A JSONL record failed to parse or validate.
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    /// Fact file names a domain outside the known ten.
    #[error("unknown fact domain `{0}`")]
    UnknownDomain(String),

    /// The same fact id appears twice in a fact file.
    #[error("duplicate fact_id `{id}` at entries {first} and {second}")]
    DuplicateFactId {
        id: String,
        first: usize,
        second: usize,
    },

    /// Fact sets drawn from different universes cannot be intersected.
    #[error("mismatched fact universes: {0}")]
    MismatchedUniverses(String),

    /// Operation expected a different task kind.
    #[error("task kind mismatch: {0}")]
    TaskKind(String),

    /// Attention cache was needed but not captured.
    #[error("attention cache missing for layer {0}")]
    CacheMissing(usize),

    /// Report inputs mix task kinds in one table.
    #[error("records mix task kinds: {0}")]
    MixedKinds(String),

    /// File-system failure with the path involved.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV (de)serialization failure.
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Shape { .. } => "shape",
            Self::NonFinite(_) => "non_finite",
            Self::OutOfBounds(_) => "out_of_bounds",
            Self::Config(_) => "config",
            Self::InvalidParameter(_) => "invalid_parameter",
            Self::MissingTensor { .. } => "missing_tensor",
            Self::UnmappedSlot(_) => "unmapped_slot",
            Self::DuplicateSlot(_) => "duplicate_slot",
            Self::UnknownSlot(_) => "unknown_slot",
            Self::TensorShape { .. } => "tensor_shape",
            Self::UnsupportedDtype { .. } => "unsupported_dtype",
            Self::SafeTensors(_) => "safetensors",
            Self::Capacity(_) => "capacity",
            Self::EmptyTask(_) => "empty_task",
            Self::NamePoolExhausted(_) => "name_pool_exhausted",
            Self::MultiTokenName { .. } => "multi_token_name",
            Self::UnknownWord(_) => "unknown_word",
            Self::Infeasible(_) => "infeasible",
            Self::MalformedRecord { .. } => "malformed_record",
            Self::UnknownDomain(_) => "unknown_domain",
            Self::DuplicateFactId { .. } => "duplicate_fact_id",
            Self::MismatchedUniverses(_) => "mismatched_universes",
            Self::TaskKind(_) => "task_kind",
            Self::CacheMissing(_) => "cache_missing",
            Self::MixedKinds(_) => "mixed_kinds",
            Self::Io { .. } => "io",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
        }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
