use deid_core::anonymizer::{AnonymizeError, PolicyError};
use deid_core::datagen::DatagenError;
use deid_core::markup::CorpusError;
use deid_core::metrics::MetricsError;
use deid_core::store::StoreError;
use deid_core::tagger::TaggerError;
use deid_core::taxonomy::TaxonomyError;
use deid_core::tokenizer::{DictError, TokenizerError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input.
    #[error("{0}")]
    Input(String),
    /// Inputs that are individually valid but disagree with each other.
    #[error("{0}")]
    Contract(String),
    #[error("{0} warning(s) treated as errors (--strict)")]
    Strict(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Strict(_) => 1,
            CliError::Input(_) => 2,
            CliError::Contract(_) => 3,
        }
    }

    pub fn input(msg: impl std::fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn contract(msg: impl std::fmt::Display) -> Self {
        CliError::Contract(msg.to_string())
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_error!(
    TaxonomyError,
    StoreError,
    CorpusError,
    DictError,
    PolicyError,
    std::io::Error
);

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::UnknownId(_)
            | TokenizerError::InvalidByteSequence
            | TokenizerError::UnknownLabel(_) => CliError::Contract(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Io { .. }
            | DatagenError::Json { .. }
            | DatagenError::InvalidPlan(_)
            | DatagenError::InvalidSplit(_)
            | DatagenError::DuplicateDocId(_) => CliError::Input(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<TaggerError> for CliError {
    fn from(e: TaggerError) -> Self {
        match e {
            TaggerError::Io { .. }
            | TaggerError::Json { .. }
            | TaggerError::DuplicatePrediction(_) => CliError::Input(e.to_string()),
            _ => CliError::Contract(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Contract(e.to_string())
    }
}

impl From<AnonymizeError> for CliError {
    fn from(e: AnonymizeError) -> Self {
        CliError::Contract(e.to_string())
    }
}
