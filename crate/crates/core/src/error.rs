use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix `{name}` is not symmetric positive definite")]
    NotPositiveDefinite { name: &'static str },

    #[error("rollout diverged at stage {stage}")]
    RolloutDiverged { stage: usize },

    #[error("particle {particle}: {source}")]
    Particle {
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble mean diverged at inner iteration {iteration}")]
    EnsembleDiverged { iteration: usize },

    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("MPC step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("all sample costs are non-finite")]
    NonFiniteCosts,

    #[error("environment generation failed: {0}")]
    Environment(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            actual,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::dim(what, expected, actual))
    }
}
