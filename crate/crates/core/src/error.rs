use thiserror::Error;

/// Errors raised anywhere in the training pipeline.
///
/// Each variant maps onto one process exit code (see [`FairError::exit_code`]).
#[derive(Debug, Error)]
pub enum FairError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error at row {row}, column {column}: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FairError>;

impl FairError {
    pub fn config(msg: impl Into<String>) -> Self {
        FairError::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        FairError::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        FairError::Numeric(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FairError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            FairError::Config(_) => 2,
            FairError::Cell { .. }
            | FairError::Data(_)
            | FairError::Validation(_)
            | FairError::Generation(_) => 3,
            FairError::Numeric(_) | FairError::Metric(_) => 4,
            FairError::Io { .. } => 1,
        }
    }
}
