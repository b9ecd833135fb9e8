use thiserror::Error;

/// Errors produced by the factorization, privacy and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// The input violates a data invariant (negative entry, unnormalized column, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A text input could not be parsed. `line` and `column` are 1-based.
    #[error("{source_name}: line {line}, column {column}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    /// The curator/analyst channel failed. `round` is the last completed round.
    #[error("channel failure after round {round}: {msg}")]
    Channel { round: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
