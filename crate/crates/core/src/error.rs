use std::io;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or out-of-range argument.
    #[error("input error: {0}")]
    Input(String),

    /// A schedule or sampler coefficient is singular at the requested point.
    #[error("singularity: {0}")]
    Singularity(String),

    /// An operation was invoked with inconsistent cached state.
    #[error("state error: {0}")]
    State(String),

    /// A non-finite or otherwise invalid number appeared mid-computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An optimizer step was refused because a gradient was not finite.
    #[error("optimizer step aborted: gradient[{index}] = {value}")]
    NonFiniteGradient { index: usize, value: f64 },

    /// Training was stopped; the message carries the diagnostic.
    #[error("training aborted at iteration {iteration}: {reason}")]
    TrainingAborted { iteration: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
