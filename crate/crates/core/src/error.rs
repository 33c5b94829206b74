use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-positive price {price} at position {index}")]
    NonPositivePrice { index: usize, price: f64 },

    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotoneTimestamp { line: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("volatility is identically zero; mean volatility undefined")]
    ZeroVolatility,

    #[error("design matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },

    #[error("non-finite model output at parameters {params:?}")]
    NonFinite { params: Vec<f64> },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("no fit converged: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by too little data rather than malformed input.
    pub fn is_insufficient_data(&self) -> bool {
        matches!(self, Error::InsufficientData(_))
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NotConverged(_) | Error::RankDeficient { .. } | Error::Degenerate(_)
        )
    }
}
