use std::io;

use thiserror::Error;

use crate::engine::FaultPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("leaf {got} inserted out of order (expected leaf {expected})")]
    OutOfOrder { expected: u64, got: u64 },

    #[error("leaf {leaf} exceeds tree capacity of {capacity} leaves")]
    Capacity { leaf: u64, capacity: u64 },

    #[error("prefix step {step} is outside 1..={max}")]
    InvalidStep { step: u64, max: u64 },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("state error: {0}")]
    State(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("state store corrupted: {0}")]
    Corruption(String),

    #[error("line {line}: {message}")]
    Ingest { line: u64, message: String },

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("injected fault at {0:?}")]
    InjectedFault(FaultPoint),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
