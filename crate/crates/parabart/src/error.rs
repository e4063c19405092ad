//! Crate-wide error type.
//!
//! Fallible I/O and data-validation paths return [`Error`]; shape and index
//! violations inside the tensor engine are programmer errors and panic with a
//! descriptive message instead.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bracketed-tree syntax error. `offset` is the 1-based byte position in
    /// the input at which parsing could not continue.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// A constituent tag that is not part of the active tag set.
    #[error("unknown constituent tag {tag:?} (tag set has {known} entries)")]
    UnknownTag { tag: String, known: usize },

    /// A linearized-parse token that the parse vocabulary cannot encode.
    #[error("unknown parse token {token:?}")]
    UnknownParseToken { token: String },

    /// A corpus line that failed validation in strict mode.
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    /// Malformed or unreadable checkpoint data.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Degenerate or malformed evaluation input (zero vectors, constant
    /// score columns, empty files, short pools, ...).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Inconsistent configuration or model/data mismatch.
    #[error("config error: {0}")]
    Config(String),

    /// A model forward-pass contract violation (length overflow, shape
    /// mismatch against the loaded parameters).
    #[error("model error: {0}")]
    Model(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn eval(msg: impl Into<String>) -> Self {
        Error::Eval(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }
}
