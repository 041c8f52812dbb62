use persona_core::baseline::BaselineError;
use persona_core::client::ClientError;
use persona_core::corpus::CorpusError;
use persona_core::labels::SchemaError;
use persona_core::metrics::MetricsError;
use persona_core::promptgen::PromptError;
use thiserror::Error;

/// Failure classes, one per exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Endpoint(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Split(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Sink { .. } => CliError::Internal(e.to_string()),
            PromptError::MissingTemplate { .. } | PromptError::Io { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(_) => CliError::Config(e.to_string()),
            ClientError::Cache { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Endpoint(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Config(_) | BaselineError::Mismatch(_) => {
                CliError::Config(e.to_string())
            }
            BaselineError::Io(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
