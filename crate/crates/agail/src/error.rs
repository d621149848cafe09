use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum AgailError {
    /// A caller passed data violating an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),

    /// An experiment configuration is internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A file did not match its expected schema.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Training produced a non-finite quantity.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AgailError>;
