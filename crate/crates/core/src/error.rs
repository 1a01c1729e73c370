use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a documented precondition (shape, range, kind).
    #[error("usage error: {0}")]
    Usage(String),

    /// The master problem has no feasible point.
    #[error("infeasible model: {0}")]
    Infeasible(String),

    /// An iterative routine failed to converge or produced non-finite values.
    #[error("numerical failure: {message} (best residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("config error in field '{field}': {message}")]
    Config { field: String, message: String },

    /// Failure inside one iteration of the alternating loop.
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
