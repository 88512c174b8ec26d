use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Required data (channel, BRT row, Q entry) is missing.
    #[error("missing data: {0}")]
    Data(String),

    /// No BS-to-user reflection path exists.
    #[error("no feasible reflection path from the BS to the user")]
    Infeasible,

    #[error("exhaustive search refused: {count:.3e} combinations exceed the cap of {cap:.3e}")]
    Refused { count: f64, cap: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
