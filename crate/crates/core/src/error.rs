use thiserror::Error;

/// Errors raised by the solvers and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("time series misaligned: {0}")]
    Misaligned(String),

    #[error("CFL violation at step {step}: dt = {dt:e} exceeds admissible {admissible:e}")]
    Cfl {
        step: usize,
        dt: f64,
        admissible: f64,
    },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("optimizer failed at iteration {iteration}: {source}")]
    Optimizer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Innermost error, looking through optimizer context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Optimizer { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
