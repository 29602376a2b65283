//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised while loading or splitting a corpus.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate drug id {id:?} at line {line}")]
    DuplicateDrug { id: String, line: usize },
    #[error("duplicate interaction type id {id} at line {line}")]
    DuplicateType { id: usize, line: usize },
    #[error("triple at line {line} references unknown drug id {id:?}")]
    DanglingDrug { id: String, line: usize },
    #[error("triple at line {line} references unknown interaction type {id}")]
    DanglingType { id: usize, line: usize },
    #[error("triple at line {line} relates drug {id:?} to itself")]
    SelfInteraction { id: String, line: usize },
    #[error("interaction type ids are not dense and contiguous: expected 0..{expected}, missing {missing}")]
    SparseTypeIds { expected: usize, missing: usize },
    #[error("interaction type {id} template is missing placeholder {placeholder:?}")]
    BadTemplate { id: usize, placeholder: &'static str },
    #[error("drug {id:?} has an empty description")]
    EmptyDescription { id: String },
    #[error("split fractions must lie in (0,1) and sum below 1: val={val}, tst={tst}")]
    BadFractions { val: f64, tst: f64 },
    #[error("split leaves no training drugs (n={n_drugs}, val={val}, tst={tst})")]
    EmptyTrain { n_drugs: usize, val: f64, tst: f64 },
    #[error("split manifest does not match corpus: unknown drug id {id:?}")]
    ManifestDrug { id: String },
    #[error("split manifest does not match corpus: triple ({u:?}, {i}, {v:?}) not present")]
    ManifestTriple { u: String, i: usize, v: String },
}

/// Errors from prompt construction.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("sentence belongs to neither drug of the pair")]
    ForeignSentence,
    #[error("sentence is already selected")]
    DuplicateSentence,
}

/// Errors from predictor training and checkpoint IO.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training sample set is empty")]
    EmptySamples,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("evaluation requires a policy checkpoint for selector mode")]
    MissingPolicy,
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run directory state is inconsistent: {0}")]
    BadRunDir(String),
}

/// Errors from advantage estimation and policy updates.
#[derive(Debug, Error)]
pub enum PpoError {
    #[error("values must have exactly one more entry than rewards (got {values} vs {rewards})")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("episode batch is empty")]
    EmptyBatch,
    #[error("episode for pair ({u}, {v}) has no steps")]
    EmptyEpisode { u: String, v: String },
    #[error("non-finite surrogate (max |ratio| {max_ratio}) on pair ({u}, {v})")]
    NonFiniteSurrogate { max_ratio: f64, u: String, v: String },
}

/// Errors from metric computation.
#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("predictions and labels differ in length ({predictions} vs {labels})")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("metric needs both classes present")]
    SingleClass,
    #[error("metric input is empty")]
    Empty,
    #[error("label {label} out of range for {n_types} types")]
    LabelOutOfRange { label: usize, n_types: usize },
    #[error("cannot sample a negative pair: type {type_id} is positive for every drug pair")]
    TypeSaturated { type_id: usize },
    #[error("signal selection rate is undefined for empty episodes")]
    NoSelections,
    #[error("episode references drug {id:?} absent from the ground-truth map")]
    ForeignEpisode { id: String },
}
