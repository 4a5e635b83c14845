use thiserror::Error;

/// Errors raised by kernel evaluation, system assembly and the predictors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrigingError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("derivative order {order} exceeds the analytic limit of {max}")]
    UnsupportedOrder { order: u32, max: u32 },

    #[error("duplicate observation atom at index {first} and {second}")]
    DuplicateAtom { first: usize, second: usize },

    #[error("operator row {row} has no term with a nonzero coefficient")]
    EmptyOperatorRow { row: usize },

    #[error("covariance matrix not positive definite after escalating the nugget to {last_nugget:e}; try a larger nugget")]
    Conditioning { last_nugget: f64 },

    #[error("constraint matrix is rank deficient: rank {rank} < {cols}, dependent rows {dependent:?}")]
    RankDeficient {
        rank: usize,
        cols: usize,
        dependent: Vec<usize>,
    },

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: u64,
        reason: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, KrigingError>;

impl From<std::io::Error> for KrigingError {
    fn from(e: std::io::Error) -> Self {
        KrigingError::Io(e.to_string())
    }
}
