use thiserror::Error;

/// Errors raised by the tensor engine and everything built on top of it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index error: {0}")]
    Index(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },
    #[error("sentence {index} has {len} tokens, sentence encoder fits at most {max}")]
    SentenceLength {
        index: usize,
        len: usize,
        max: usize,
    },
    #[error("token id {id} out of vocabulary of size {vocab}")]
    Vocab { id: usize, vocab: usize },
    #[error("segment error: {0}")]
    Segment(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fact alignment error: {0}")]
    FactAlignment(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("document excluded: {0}")]
    ExcludedDocument(String),
    #[error("invalid label data: {0}")]
    Label(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("invalid gradient check: {0}")]
    InvalidCheck(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
