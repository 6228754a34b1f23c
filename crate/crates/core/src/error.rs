use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its valid domain (bad dimension, probability, count).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The operation is not valid for the current state (empty dataset, uninitialized priors).
    #[error("invalid state: {0}")]
    State(String),
    /// A metric is undefined for the given data, e.g. AUC with a single class.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    /// Dataset schema did not match the input table.
    #[error("schema error: {0}")]
    Schema(String),
    /// Ingestion produced no usable data.
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

pub(crate) fn state<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::State(msg.into()))
}
