use thiserror::Error;

/// Errors produced by solver, operator, and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("dtype mismatch: expected {expected}, got {got}")]
    DtypeMismatch { expected: String, got: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("operation not supported for this operator kind: {0}")]
    UnsupportedKind(String),

    #[error("dense materialization refused: input size {got} exceeds limit {limit}")]
    SizeGuard { limit: usize, got: usize },

    #[error("wire protocol error: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 config, 2 numerical divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::NonFinite(_) => 2,
            Error::Io(_) | Error::Image(_) | Error::Protocol(_) => 3,
            _ => 2,
        }
    }
}
