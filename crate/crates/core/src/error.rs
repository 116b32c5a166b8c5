use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    Rank { columns: Vec<String> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("cluster leakage between training and test data: {0}")]
    Leakage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Rank { .. } | Error::InsufficientData(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
