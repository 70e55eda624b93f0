use std::fmt;

pub use anyhow::Context;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input layout (exit 2).
    Usage(anyhow::Error),
    /// The command started but could not finish (exit 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage_msg(msg: impl fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn runtime_msg(msg: impl fmt::Display) -> Self {
        CliError::Runtime(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub trait Classify<T> {
    fn usage(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

/// How a command that returned normally went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// Some items failed; the outputs cover the rest.
    Partial { failed: usize },
}

impl Status {
    pub fn from_failures(failed: usize) -> Self {
        if failed == 0 {
            Status::Complete
        } else {
            Status::Partial { failed }
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Complete => 0,
            Status::Partial { .. } => 1,
        }
    }
}
