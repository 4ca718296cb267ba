use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes or widths that do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    /// Invalid configuration or input values.
    #[error("configuration error: {0}")]
    Config(String),
    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// An operation was called in a state where it makes no sense.
    #[error("logic error: {0}")]
    Logic(String),
    /// The requested quantity is undefined for this input.
    #[error("undefined: {0}")]
    Undefined(String),
    /// Malformed checkpoint bytes.
    #[error("checkpoint decode error: {0}")]
    Decode(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
