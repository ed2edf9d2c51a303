use thiserror::Error;

/// Errors raised by the simulation and recursion routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported splitter: {0}")]
    UnsupportedSplitter(String),

    #[error("invalid splitter parameter: {0}")]
    InvalidSplitter(String),

    #[error("invalid split tree parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),

    #[error("input too large: {0}")]
    TooLarge(String),

    #[error("root has not split (n = {n} <= s = {s})")]
    RootNotSplit { n: usize, s: usize },

    #[error("chain exceeded the step budget of {0} steps")]
    StepBudgetExceeded(usize),

    #[error("constant fit unstable: {0}")]
    FitUnstable(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Serialization(format!("{other:?}")),
        }
    }
}
