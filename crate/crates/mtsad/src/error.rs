use thiserror::Error;

/// Errors produced by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A required column is missing or the header does not match the schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Timestamps are unusable: unsorted, non-uniform beyond fillable gaps, or unparseable.
    #[error("format error: {0}")]
    Format(String),

    /// A cell could not be parsed as a number. Rows are 1-based including the header.
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// An argument violates a documented precondition.
    #[error("argument error: {0}")]
    Argument(String),

    /// The series is too short for the requested transform.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Non-overlapping anomaly windows could not be placed.
    #[error("placement error: {0}; try a lower anomaly count")]
    Placement(String),

    /// A tensor shape does not match the network configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {component} loss is not finite")]
    Divergence { epoch: usize, component: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
