use alloc::string::String;

use crate::query::IntentLabel;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("query is empty after normalization")]
    EmptyQuery,
    #[error("query is {0} characters long, maximum is 512")]
    QueryTooLong(usize),
    #[error("out-of-vocabulary intent label {0:?}")]
    OutOfVocabularyLabel(String),
    #[error("confidence {0} outside (0, 1]")]
    InvalidConfidence(f64),
    #[error("duplicate gold query {0:?}")]
    DuplicateGoldQuery(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("labeling function name {0:?} is not unique")]
    DuplicateFunction(String),
    #[error("invalid labeling function {name:?}: {reason}")]
    InvalidFunction { name: String, reason: String },

    #[error("scenario requires a few-shot bank")]
    MissingBank,
    #[error("invalid few-shot bank: {0}")]
    InvalidBank(String),
    #[error("invalid prompt assets: {0}")]
    InvalidAssets(String),

    #[error("class {label} has {have} eligible queries, {need} required")]
    InsufficientClass { label: IntentLabel, have: usize, need: usize },
    #[error("query id {0:?} appears in both the random and high-confidence parts")]
    OverlapDetected(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate prediction for query id {0:?}")]
    DuplicatePrediction(String),
    #[error("gold set is empty")]
    EmptyGold,
    #[error("systems are not aligned on the same queries: {0}")]
    MisalignedInputs(String),

    #[error("invalid hybrid policy: {0}")]
    InvalidPolicy(String),
}
