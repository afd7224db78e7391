use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file could not be tokenized or parsed.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input parsed but violates a structural invariant (self-loop, bad weight,
    /// duplicate or missing node, shape mismatch).
    #[error("{0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The solver produced a non-finite energy.
    #[error("non-finite energy at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A seeded run inside an experiment failed.
    #[error("run with seed {seed} failed: {source}")]
    RunFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error (or the error it wraps) is a numerical failure of the solver.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalFailure { .. } => true,
            Error::RunFailed { source, .. } | Error::File { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Short stable name of the error class, used in machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::InvalidParameter(_) => "parameter",
            Error::NumericalFailure { .. } => "numerical",
            Error::UndefinedMetric(_) => "metric",
            Error::RunFailed { source, .. } | Error::File { source, .. } => source.kind(),
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn with_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
