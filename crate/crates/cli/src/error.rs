use std::path::PathBuf;

use dualid_core::error::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const ACCEPTANCE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("acceptance failed: {0}")]
    Acceptance(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Solver(_) => exit::SOLVER,
            CliError::Acceptance(_) => exit::ACCEPTANCE,
            CliError::Io { .. } => exit::IO,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn at(self, stage: &'static str) -> Self {
        match self {
            CliError::Stage { .. } => self,
            other => CliError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::SolverFailure(_) | CoreError::Infeasible(_) | CoreError::MalformedProblem(_) => {
                CliError::Solver(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
