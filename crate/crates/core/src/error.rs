use std::io;

use thiserror::Error;

pub type Result<T, E = DuetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DuetError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("sample {id} has no annotations")]
    EmptyAnnotations { id: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("fatal configuration: {0}")]
    FatalConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DuetError {
    /// Stable machine-readable code used in CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            DuetError::Argument(_) => "E_ARGUMENT",
            DuetError::Shape(_) => "E_SHAPE",
            DuetError::State(_) => "E_STATE",
            DuetError::EmptyAnnotations { .. } => "E_EMPTY_ANNOTATIONS",
            DuetError::Parse { .. } => "E_PARSE",
            DuetError::Schema { .. } => "E_SCHEMA",
            DuetError::Numeric(_) => "E_NUMERIC",
            DuetError::Degenerate(_) => "E_DEGENERATE",
            DuetError::UndefinedMetric(_) => "E_UNDEFINED_METRIC",
            DuetError::FatalConfig(_) => "E_FATAL_CONFIG",
            DuetError::Io(_) => "E_IO",
            DuetError::Json(_) => "E_JSON",
            DuetError::Csv(_) => "E_CSV",
        }
    }

    /// Process exit status: 3 data/schema, 4 numeric, 5 fatal config.
    pub fn exit_code(&self) -> i32 {
        match self {
            DuetError::Numeric(_) | DuetError::Degenerate(_) => 4,
            DuetError::FatalConfig(_) | DuetError::Argument(_) => 5,
            _ => 3,
        }
    }
}
