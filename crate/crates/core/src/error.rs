use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes, names or layouts that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// A shape mismatch detected at a specific layer of a network.
    #[error("configuration error at layer {layer} of `{net}`: {msg}")]
    Layer {
        net: String,
        layer: usize,
        msg: String,
    },
    /// API misuse such as a stale tape or sampling an underfilled buffer.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values encountered during training.
    #[error("training error: {0}")]
    Training(String),
    /// Malformed checkpoint bytes.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
