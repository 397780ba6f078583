use thiserror::Error;

use crate::discourse::DocumentError;
use crate::fine_retrieval::ScorerError;
use crate::gateway::GatewayError;
use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{stage} call {index}: {source}")]
    AtCall {
        stage: String,
        index: usize,
        #[source]
        source: GatewayError,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("question sets differ: {0}")]
    QuestionSetMismatch(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
