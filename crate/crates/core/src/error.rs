use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range (valid: {min}..={max})")]
    BasisIndex { index: usize, min: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("change points {first} and {second} are closer than the minimum separation {min_sep}")]
    DegenerateAlpha { first: f64, second: f64, min_sep: f64 },

    #[error("coefficient {index} is negative ({value}); non-intercept coefficients must be >= 0")]
    ConstraintViolation { index: usize, value: f64 },

    #[error("invalid dyadic label: {0}")]
    Label(String),

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("unknown identifier: {0}")]
    Lookup(String),

    #[error("insufficient data: {n} observations, need at least {needed}")]
    InsufficientData { n: usize, needed: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("indeterminate: {0}")]
    Indeterminate(String),

    #[error("hypothesis specification error: {0}")]
    Spec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
