//! Error type for the pipeline driver: spec-file problems plus everything
//! the staged layers can raise.

use std::fmt;

use tandem_backend::BackendError;
use tandem_bridge::BridgeError;
use tandem_ir::StageError;
use tandem_ml::MlError;
use tandem_rel::RelError;

#[derive(Debug)]
pub enum CliError {
    /// Spec, matrix, or generator file problems: syntax, unknown fields,
    /// failed validation. The message names the offending field.
    Spec(String),
    Io(String),
    Stage(StageError),
    Rel(RelError),
    Ml(MlError),
    Bridge(BridgeError),
    Backend(BackendError),
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        CliError::Stage(e)
    }
}

impl From<RelError> for CliError {
    fn from(e: RelError) -> Self {
        CliError::Rel(e)
    }
}

impl From<MlError> for CliError {
    fn from(e: MlError) -> Self {
        CliError::Ml(e)
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        CliError::Bridge(e)
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Spec(m) => write!(f, "spec: {m}"),
            CliError::Io(m) => write!(f, "io: {m}"),
            CliError::Stage(e) => write!(f, "staging: {e}"),
            CliError::Rel(e) => write!(f, "{e}"),
            CliError::Ml(e) => write!(f, "{e}"),
            CliError::Bridge(e) => write!(f, "{e}"),
            CliError::Backend(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;
