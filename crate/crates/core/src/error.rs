use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("point ({x1}, {x2}) lies outside the open unit square")]
    Domain { x1: f64, x2: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unsupported format version `{0}`")]
    Version(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("linear solve did not converge (relative residual {residual:e})")]
    Convergence { residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    Training {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("optimization aborted at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },

    #[error(transparent)]
    Engine(#[from] crate::autodiff::EngineError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
