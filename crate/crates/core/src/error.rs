use thiserror::Error;

/// Errors raised anywhere in the paraphrasing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("pair rejected: {0}")]
    PairRejected(String),

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("length error: sequence of length {len} outside [1, {max}]")]
    Length { len: usize, max: usize },

    #[error("data error in pair {pair}: {message}")]
    Data { pair: String, message: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint has {expected}, vocabulary file has {found}")]
    VocabMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
