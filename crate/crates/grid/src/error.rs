use thiserror::Error;

use crate::model::{BusId, Element};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("unknown bus {bus} ({context})")]
    UnknownBus { bus: BusId, context: String },

    #[error("invalid case: {0}")]
    Invalid(String),

    #[error("unknown case '{name}'; valid aliases: {}", valid.join(", "))]
    UnknownCase { name: String, valid: Vec<String> },

    #[error("unknown connection type '{0}'; expected one of load, solar, wind, bess, hybrid, synchronous")]
    UnknownConnectionType(String),

    #[error("invalid connection request: {0}")]
    InvalidConnection(String),

    #[error("unknown {0}")]
    UnknownElement(Element),

    #[error("{0} is already out of service")]
    AlreadyOutOfService(Element),

    #[error("{0} is already in service")]
    AlreadyInService(Element),

    #[error("base case power flow did not converge: {0}")]
    BaseDiverged(String),

    #[error("power flow did not converge; report the divergence instead of a violation list: {0}")]
    NotConverged(String),

    #[error("transient setup failed: {0}")]
    Transient(String),

    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}
