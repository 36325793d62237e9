//! CLI error type with the exit-code contract: 2 for config problems, 3 for
//! a missing upstream artifact, 4 for numerical divergence, 1 otherwise.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {artifact}: run `{producer}` first")]
    MissingArtifact { artifact: String, producer: String },
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Divergence(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}


impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<retlab::corpus::CorpusError> for CliError {
    fn from(e: retlab::corpus::CorpusError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<retlab::lexical::LexicalError> for CliError {
    fn from(e: retlab::lexical::LexicalError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<retlab::synthgen::SynthError> for CliError {
    fn from(e: retlab::synthgen::SynthError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<retlab::persist::PersistError> for CliError {
    fn from(e: retlab::persist::PersistError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<retlab::train::TrainError> for CliError {
    fn from(e: retlab::train::TrainError) -> Self {
        match e {
            retlab::train::TrainError::NonFiniteLoss { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<retlab::invert::InvertError> for CliError {
    fn from(e: retlab::invert::InvertError) -> Self {
        match e {
            retlab::invert::InvertError::NonFiniteLoss { .. } => {
                CliError::Divergence(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<retlab::roundtrip::RoundtripError> for CliError {
    fn from(e: retlab::roundtrip::RoundtripError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<retlab::router::RouterError> for CliError {
    fn from(e: retlab::router::RouterError) -> Self {
        CliError::Other(e.to_string())
    }
}
