use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not orthonormal (max |T^T T - I| = {max_deviation:e})")]
    NotOrthonormal { max_deviation: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate coefficient variance {variance:e} at index {index} (threshold {threshold:e})")]
    DegenerateVariance {
        index: usize,
        variance: f64,
        threshold: f64,
    },

    #[error("retraction failed: smallest singular value {smallest_singular:e}")]
    RankDeficient { smallest_singular: f64 },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("no step size in [{lo:e}, {hi:e}] reaches rate {target} (nearest {nearest})")]
    BracketExhausted {
        lo: f64,
        hi: f64,
        target: f64,
        nearest: f64,
    },

    #[error("curve has {found} points, at least 4 are required")]
    InsufficientPoints { found: usize },

    #[error("rate-distortion curves do not overlap")]
    NoOverlap,

    #[error("input size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },

    #[error("dimensions not divisible: {0}")]
    IndivisibleDimensions(String),

    #[error("stationary block has no vectors")]
    EmptyBlock,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Coarse classification used by the command-line front end to pick an
    /// exit code.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_)
            | Error::EmptyTrainingSet
            | Error::InsufficientPoints { .. }
            | Error::NoOverlap => ErrorClass::Config,
            Error::NotSquare { .. }
            | Error::NotPsd { .. }
            | Error::NotOrthonormal { .. }
            | Error::DimensionMismatch { .. }
            | Error::NonFinite(_)
            | Error::EmptyInput(_)
            | Error::SizeMismatch { .. }
            | Error::IndivisibleDimensions(_)
            | Error::EmptyBlock
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::DegenerateVariance { .. } | Error::RankDeficient { .. } | Error::BracketExhausted { .. } => {
                ErrorClass::Numerical
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}
