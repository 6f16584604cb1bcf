use std::fmt::Display;

use thiserror::Error;

use cog_core::corpus::CorpusError;
use cog_core::decoder::DecodeError;
use cog_core::encoder::EncoderError;
use cog_core::index::IndexError;
use cog_core::metrics::MetricsError;
use cog_core::segmenter::SegmentError;
use cog_core::training::TrainError;

/// Every failure the command surface reports, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<CliError> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn data(context: impl Display, e: impl Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }

    pub fn in_stage(self, stage: &str) -> Self {
        CliError::Stage { stage: stage.to_string(), source: Box::new(self) }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(CorpusError, SegmentError, IndexError, EncoderError, MetricsError, std::io::Error);

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::EmptyCandidates | DecodeError::NonFiniteScore(_) => CliError::Internal(e.to_string()),
            DecodeError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
