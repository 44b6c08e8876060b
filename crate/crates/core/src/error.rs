//! Crate-wide error type. Every fallible operation returns [`Result`];
//! nothing panics on malformed input.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents are inconsistent with what an operation requires.
    /// The message always names both offending shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A scalar argument (stride, radius, k, ...) is out of its valid range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A network configuration is unusable; the message names the offending key.
    #[error("invalid config: {0}")]
    Config(String),

    /// A binary or text file does not follow its documented layout.
    /// Byte-level failures cite the offset at which parsing stopped.
    #[error("format error: {0}")]
    Format(String),

    /// The forward graph referenced a parameter the ParamSet does not hold.
    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
