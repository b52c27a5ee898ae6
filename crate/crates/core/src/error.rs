//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate entity_id '{0}'")]
    DuplicateEntity(String),

    #[error("embedding failed: {0}")]
    Embedding(String),

    #[error("retrieval failed: {0}")]
    Retrieval(#[source] Box<Error>),

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("chat client error (status {status}): {body}")]
    Http { status: u16, body: String },

    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: usize },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("model returned an empty response")]
    EmptyResponse,

    #[error("no <{tag}></{tag}> pair found in model output")]
    MissingTag { tag: &'static str },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("token references unknown sentence index {0}")]
    UnknownSentence(usize),

    #[error("token id {id} out of range for vocab size {vocab}")]
    Vocab { id: u32, vocab: usize },

    #[error("{0} must be non-empty")]
    EmptyInput(&'static str),

    #[error("qid '{0}' present in only one of the paired runs")]
    Unpaired(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
