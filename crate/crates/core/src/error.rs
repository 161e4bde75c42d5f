use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("generation error: {0}")]
    Generation(String),
    #[error("power iteration did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid construction: {0}")]
    Construction(String),
    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("trace does not match the parameters it is used with: {0}")]
    StaleTrace(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown verification suite `{0}`")]
    UnknownSuite(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
