use std::io;

use thiserror::Error;

/// Errors raised by transports, distributed collections and the matrix kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("alignment error: sequences do not share an ownership mapping")]
    Alignment,

    #[error("index {index} out of range for sequence of length {len}")]
    Index { index: usize, len: usize },

    #[error("element {index} has no owning rank (sequence is longer than its group)")]
    Unowned { index: usize },

    #[error("operation requires a non-empty sequence")]
    EmptySequence,

    #[error("decomposition error: {0}")]
    Decomposition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("collective contract violated: {0}")]
    Contract(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
