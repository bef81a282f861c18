//! Backend error type shared by the interpreter and the C pipeline.

use std::fmt;

#[derive(Debug)]
pub enum BackendError {
    /// Runtime failure while executing a program (trap, bad input file,
    /// worker failure).
    Exec(String),
    /// The graph cannot be lowered to C (unsupported construct).
    Emit(String),
    /// The C compiler failed or the toolchain is unusable.
    Cc(String),
    /// Filesystem trouble around generated sources and binaries.
    Io(String),
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Exec(m) => write!(f, "execution failed: {}", m),
            BackendError::Emit(m) => write!(f, "cannot emit C: {}", m),
            BackendError::Cc(m) => write!(f, "C toolchain: {}", m),
            BackendError::Io(m) => write!(f, "io: {}", m),
        }
    }
}

impl std::error::Error for BackendError {}

impl From<std::io::Error> for BackendError {
    fn from(e: std::io::Error) -> Self {
        BackendError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BackendError>;
