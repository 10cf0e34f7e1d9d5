use thiserror::Error;

/// Errors raised by the solvers, the oracle and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The threshold search ran past its bound without the cost curve settling.
    #[error("threshold search exceeded {limit} lattice steps without the cost converging (tau = {tau})")]
    UnboundedSearch { tau: u32, limit: usize },

    /// Relative value iteration hit its iteration cap.
    #[error("value iteration did not converge after {iterations} iterations (span {span:.3e})")]
    OracleDiverged { iterations: usize, span: f64 },

    /// An agent description violates one of its invariants.
    #[error("invalid agent {agent}: {reason}")]
    InvalidAgent { agent: usize, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
