//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model validation, the rate calculus, the path
/// optimizer, and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An input failed validation. The message names the offending field or
    /// argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that requires an ergodic network was invoked on a
    /// network with an overloaded channel.
    #[error("network is not ergodic: channel {channel} carries load {load} >= capacity {capacity}")]
    NotErgodic {
        channel: u32,
        load: f64,
        capacity: f64,
    },

    /// A tilted generator violates a feasibility constraint for the face it
    /// is evaluated on.
    #[error("infeasible generator: {0}")]
    InfeasibleGenerator(String),

    /// A statistic could not be computed from the available data. The
    /// message says what was missing.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A weighted replication encountered a jump whose likelihood ratio is
    /// undefined because one of the two measures assigns it rate zero.
    #[error("absolute continuity breach: {0}")]
    AbsoluteContinuity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
