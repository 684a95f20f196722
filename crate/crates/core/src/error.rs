use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// The gain estimator produced λ² ≥ 1; the source is not in the weak-gain regime.
    #[error("estimated gain out of range: lambda^2 = {lambda_sq}")]
    EstimationOutOfRange { lambda_sq: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed event or config file content.
    #[error("{path}: {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    /// Binary event file ends part way through a record.
    #[error("{path}: truncated record at byte offset {offset}")]
    Truncated { path: PathBuf, offset: u64 },

    #[error("classical suite is empty")]
    EmptySuite,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
