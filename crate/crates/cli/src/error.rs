use std::fmt;
use std::process::ExitCode;

use ciem_core::backend::BackendError;
use ciem_core::citgen::CitError;
use ciem_core::config::ConfigError;
use ciem_core::corpus::CorpusError;
use ciem_core::generate::GenerateError;
use ciem_core::harness::{HarnessError, ScoreError};
use ciem_core::io::IoError;
use ciem_core::review::ReviewError;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: bad flags or configuration.
    Usage(String),
    /// Exit 2: invalid input data or a violated pipeline precondition.
    Data(String),
    /// Exit 3: a remote service kept failing after all retries.
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Transport(_) => 3,
        })
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Transport(m) => f.write_str(m),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) => CliError::Usage(e.to_string()),
            BackendError::RetriesExhausted { .. } => CliError::Transport(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::Backend(b) => b.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CitError> for CliError {
    fn from(e: CitError) -> Self {
        match e {
            CitError::Generate(g) => g.into(),
            CitError::UnknownFormat(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Moderators(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::TooManyTransportFailures { .. } => CliError::Transport(e.to_string()),
            HarnessError::Config(_) => CliError::Usage(e.to_string()),
        }
    }
}
