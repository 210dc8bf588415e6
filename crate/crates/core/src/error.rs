use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid conductance law `{spec}`: {reason}")]
    Law { spec: String, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(
        "conjugate gradient did not converge after {iterations} iterations \
         (relative residual {residual:.3e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("allocation failed: {0}")]
    Resource(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn at_level(self, level: usize) -> Self {
        Error::Level {
            level,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_sample(self, sample: u64) -> Self {
        Error::Sample {
            sample,
            source: Box::new(self),
        }
    }

    /// True when the root cause is a solver that ran out of iterations.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } => true,
            Error::Level { source, .. }
            | Error::Sample { source, .. }
            | Error::Run { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}
