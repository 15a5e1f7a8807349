//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value or dimension wiring at construction time.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse, e.g. calling backward on a non-scalar loss.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training diverged (NaN loss or gradient).
    #[error("training error: {0}")]
    Training(String),

    /// Checkpoint file unreadable or incompatible with the configuration.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Raw dataset file malformed; `offset` is the byte position of the problem.
    #[error("ingestion error at byte {offset}: {msg}")]
    Ingestion { offset: u64, msg: String },

    /// Tensor or image dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Power normalization of an all-zero codeword.
    #[error("degenerate codeword: {0}")]
    DegenerateCodeword(String),

    /// HARQ state machine used out of order.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Wire frame bytes do not parse.
    #[error("frame parse error: {0}")]
    FrameParse(String),

    /// Numerically invalid argument (e.g. non-positive sigma in the KL form).
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation request cannot be satisfied (empty inputs, missing artifacts).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
