use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CodaError>;

#[derive(Debug, Error)]
pub enum CodaError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("capability missing: {0}")]
    Capability(String),

    #[error("unsupported composition mode: {0}")]
    UnsupportedMode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("record ordering violated: {0}")]
    Ordering(String),

    #[error("non-finite value produced in {0}")]
    Numeric(String),

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CodaError {
    /// Process exit code for the CLI: 1 validation, 2 runtime/capability, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CodaError::Parse { .. }
            | CodaError::Config(_)
            | CodaError::Parameter(_)
            | CodaError::Precondition(_) => 1,
            CodaError::Io { .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) fn shape_err(what: &str, expected: usize, got: usize) -> CodaError {
    CodaError::Shape(format!("{what}: expected dimension {expected}, got {got}"))
}
