//! Error type for tensor staging and model handling.

use std::fmt;

use tandem_ir::StageError;

/// Errors produced while building tensor programs or handling model data.
#[derive(Debug)]
pub enum MlError {
    /// An underlying graph-construction error.
    Stage(StageError),
    /// Shape or type mismatch between tensors.
    Shape(String),
    /// Misuse of the gradient tape (e.g. backward without a recorded forward).
    Tape(String),
    /// Model construction, checkpoint, or evaluation failure.
    Model(String),
    /// File I/O failure, with the offending path.
    Io(String),
}

impl From<StageError> for MlError {
    fn from(e: StageError) -> Self {
        MlError::Stage(e)
    }
}

impl fmt::Display for MlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MlError::Stage(e) => write!(f, "staging: {e}"),
            MlError::Shape(m) => write!(f, "shape: {m}"),
            MlError::Tape(m) => write!(f, "tape: {m}"),
            MlError::Model(m) => write!(f, "model: {m}"),
            MlError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl std::error::Error for MlError {}

pub type Result<T> = std::result::Result<T, MlError>;
