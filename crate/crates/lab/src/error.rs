use std::fmt;
use std::io;

/// Errors of the std layer, split by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// Bad configuration, arguments or inputs. Exit code 2.
    #[error("{0}")]
    Config(String),
    /// Failure while running. Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    pub fn config(msg: impl fmt::Display) -> Self {
        LabError::Config(msg.to_string())
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        LabError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Runtime(_) => 1,
        }
    }
}

impl From<sparc_core::Error> for LabError {
    fn from(e: sparc_core::Error) -> Self {
        use sparc_core::Error as E;
        match e {
            E::Config(_) | E::Layer { .. } => LabError::Config(e.to_string()),
            E::Usage(_) | E::Training(_) | E::Format(_) => LabError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for LabError {
    fn from(e: io::Error) -> Self {
        LabError::Runtime(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Runtime(format!("json: {e}"))
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Runtime(format!("csv: {e}"))
    }
}
