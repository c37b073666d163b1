use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: {message}")]
    Shape { node: usize, message: String },

    #[error("unbound input `{name}` (node {node})")]
    Unbound { node: usize, name: String },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("expected a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("checkpoint does not match model configuration: {0}")]
    ConfigMismatch(String),

    #[error("mask splits a shared tensor: {0}")]
    SplitSharedTensor(String),

    #[error("sequence length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),

    #[error("non-finite gradient for `{param}` at step {step}")]
    NonFiniteGradient { step: u64, param: String },

    #[error("validation perplexity is not finite at step {step}")]
    NonFinitePerplexity { step: u64 },

    #[error("batch contains only padding")]
    AllPadding,

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("source already begins with the back-translation tag")]
    AlreadyTagged,

    #[error("expected origin Synthetic on synthetic pair {index}")]
    NotSynthetic { index: usize },

    #[error("empty reference sentence at line {0}")]
    EmptyReference(usize),

    #[error("invalid sentence pair: {0}")]
    InvalidPair(String),

    #[error("parse error in {what} at line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    ExperimentConfig(String),

    #[error("missing artifact {what}: {path}")]
    MissingArtifact { what: &'static str, path: PathBuf },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(node: usize, message: impl Into<String>) -> Self {
        Error::Shape {
            node,
            message: message.into(),
        }
    }
}
