use thiserror::Error;

/// Errors raised by the simulation and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// An experiment or simulation configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The exponential continuation of a truncated kernel cannot be matched.
    #[error("degenerate kernel truncation: {0}")]
    DegenerateMatching(String),

    /// Trajectories or files disagree on their dimensions.
    #[error("inconsistent data: {0}")]
    DataConsistency(String),

    #[error("malformed trajectory file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
