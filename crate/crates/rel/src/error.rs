use tandem_ir::StageError;

/// Errors raised while staging relational operators: graph-level failures
/// plus schema/plan validation problems that have no graph counterpart.
#[derive(Debug)]
pub enum RelError {
    Stage(StageError),
    Plan(String),
    Io(String),
}

pub type Result<T> = std::result::Result<T, RelError>;

impl From<StageError> for RelError {
    fn from(e: StageError) -> Self {
        RelError::Stage(e)
    }
}

impl std::fmt::Display for RelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RelError::Stage(e) => write!(f, "{}", e),
            RelError::Plan(m) => write!(f, "plan error: {}", m),
            RelError::Io(m) => write!(f, "io error: {}", m),
        }
    }
}

impl std::error::Error for RelError {}
