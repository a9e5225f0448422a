//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors surfaced by the numerical pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An argument violated a precondition (non-finite point, size
    /// mismatch, eps out of range, ...).
    InvalidInput(String),
    /// A configuration is inconsistent (too few checkpoints, unsupported
    /// preset/order combination, memory estimate exceeded, ...).
    Config(String),
    /// A time integration produced a non-finite state; carries the step
    /// at which it happened.
    Diverged { step: usize, what: String },
    /// The flow Jacobian lost volume preservation beyond the guard.
    DegenerateFlow { det: f64 },
    /// An operation was called before the state it depends on was built.
    Sequencing(String),
    /// I/O failure, with the offending path.
    Io { path: String, msg: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Self::Config(msg) => write!(f, "configuration error: {msg}"),
            Self::Diverged { step, what } => {
                write!(f, "non-finite state in {what} at step {step}")
            }
            Self::DegenerateFlow { det } => {
                write!(f, "degenerate flow Jacobian (det = {det}, expected near 1)")
            }
            Self::Sequencing(msg) => write!(f, "sequencing error: {msg}"),
            Self::Io { path, msg } => write!(f, "i/o error on {path}: {msg}"),
        }
    }
}

impl std::error::Error for CoreError {}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}
