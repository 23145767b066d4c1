use alloc::string::String;

/// Errors raised by the simulator and the learning stack.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("interface error: expected length {expected}, got {got} ({what})")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("aggregation group error: {0}")]
    Aggregation(String),
}

pub type Result<T> = core::result::Result<T, Error>;
