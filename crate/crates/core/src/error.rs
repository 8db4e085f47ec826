use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or arguments (bad counts, unknown ids, bad weights).
    #[error("configuration error: {0}")]
    Config(String),
    /// Tensor or sequence dimensions disagree with the declared contract.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Training diverged or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A verifier backend failed or answered outside the protocol.
    #[error("verifier backend error: {message}")]
    Backend {
        message: String,
        /// Raw response text, when one was received.
        raw: Option<String>,
    },
    /// Narration text outside the template grammar.
    #[error("unparseable narration: {0}")]
    Parse(String),
    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn backend(msg: impl Into<String>, raw: Option<String>) -> Self {
        Error::Backend {
            message: msg.into(),
            raw,
        }
    }
}
