use physkrig::KrigingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{0}")]
    Kriging(#[from] KrigingError),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl RunError {
    /// 2 for bad configuration or input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config { .. } => 2,
            RunError::Kriging(e) => match e {
                KrigingError::InvalidParameter { .. }
                | KrigingError::DimensionMismatch { .. }
                | KrigingError::UnsupportedOrder { .. }
                | KrigingError::DuplicateAtom { .. }
                | KrigingError::EmptyOperatorRow { .. }
                | KrigingError::Parse { .. } => 2,
                KrigingError::Io(_) => 1,
                _ => 3,
            },
            RunError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "numerical",
            _ => "io",
        }
    }
}
