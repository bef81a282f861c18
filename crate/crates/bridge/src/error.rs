//! Error type for boundary-crossing operations.

use std::fmt;

use tandem_ir::StageError;
use tandem_ml::MlError;
use tandem_rel::RelError;

#[derive(Debug)]
pub enum BridgeError {
    Stage(StageError),
    Rel(RelError),
    Ml(MlError),
    /// Registry or batch-configuration misuse.
    Config(String),
}

impl From<StageError> for BridgeError {
    fn from(e: StageError) -> Self {
        BridgeError::Stage(e)
    }
}

impl From<RelError> for BridgeError {
    fn from(e: RelError) -> Self {
        BridgeError::Rel(e)
    }
}

impl From<MlError> for BridgeError {
    fn from(e: MlError) -> Self {
        BridgeError::Ml(e)
    }
}

impl fmt::Display for BridgeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BridgeError::Stage(e) => write!(f, "staging: {e}"),
            BridgeError::Rel(e) => write!(f, "{e}"),
            BridgeError::Ml(e) => write!(f, "{e}"),
            BridgeError::Config(m) => write!(f, "config: {m}"),
        }
    }
}

impl std::error::Error for BridgeError {}

pub type Result<T> = std::result::Result<T, BridgeError>;
