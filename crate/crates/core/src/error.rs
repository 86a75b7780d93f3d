use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {value:e}, largest {max:e})")]
    NotPsd { value: f64, max: f64 },

    #[error("degenerate sampling distribution (normalization constant {0:e})")]
    DegenerateDistribution(f64),

    #[error("index {index} out of range for dimension {bound}")]
    OutOfRange { index: usize, bound: usize },

    #[error("sampled index has zero probability")]
    ZeroProbability,

    #[error("sketched system has rank zero")]
    DegenerateSketch,

    #[error("{what} exceeds the enumeration bound ({size} > {limit})")]
    TooLarge {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("right-hand side callback failed: {0}")]
    Rhs(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
