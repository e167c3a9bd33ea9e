//! Failure categories and their exit codes.

use kgtyper_core::ingest::IngestError;
use kgtyper_core::pipeline::PipelineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, missing inputs.
    #[error("usage: {0}")]
    Usage(String),
    /// Inputs exist but cannot be used.
    #[error("data: {0}")]
    Data(String),
    /// The computation itself failed.
    #[error("run: {0}")]
    Run(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Run(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(e) => CliError::Io(e.to_string()),
            IngestError::MissingFile(f) => CliError::Usage(format!("missing file {f}")),
            IngestError::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ingest(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
