use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// The operation was called on the wrong kind of input.
    #[error("usage error: {0}")]
    Usage(String),

    /// A network architecture cannot be built as requested.
    #[error("architecture error: {0}")]
    Architecture(String),

    /// An implicit stage did not converge.
    #[error("integration error: fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Integration { iterations: usize, residual: f64 },

    /// Non-finite values, failed factorizations, diverged training.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the command-line workbench.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Architecture(_) | Error::Dimension(_) => 2,
            Error::Integration { .. } | Error::Numeric(_) => 3,
            Error::Io(_) | Error::Json(_) | Error::Format(_) => 4,
        }
    }
}
