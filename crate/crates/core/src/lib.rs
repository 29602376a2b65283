//! Interaction-type prediction for drug pairs from textual descriptions.
//!
//! The library couples two trainable parts: a text classifier (the
//! predictor) that maps a rendered drug-pair prompt to a distribution over
//! interaction types, and a sentence selector trained with PPO to build
//! short, relevant, token-budgeted prompts one sentence at a time. The
//! selector's reward is the change in the predictor's log-probability
//! margin as sentences are appended.
//!
//! Modules follow the data flow: [`corpus`] ingests drugs and typed
//! interaction triples and produces leakage-safe splits, [`prompt`] builds
//! budgeted prompts, [`textenc`] holds the hashed bag-of-tokens encoder and
//! predictor, [`selector`] defines the action space, policy, reward, and
//! rollouts, [`ppo`] computes advantages and performs clipped-surrogate
//! updates, [`train`] orchestrates the alternating pipeline, [`metrics`]
//! scores predictions, and [`synth`] generates benchmark corpora with a
//! known signal structure.

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod par;
pub mod ppo;
pub mod prompt;
pub mod rng;
pub mod selector;
pub mod synth;
pub mod text;
pub mod textenc;
pub mod train;

pub use corpus::{Corpus, DatasetSplit, Drug, DrugIdx, InteractionType, Sentence, SplitMode, Triple};
pub use error::{CorpusError, MetricsError, PpoError, PromptError, TrainError};
pub use metrics::MetricReport;
pub use ppo::PpoConfig;
pub use prompt::Prompt;
pub use selector::{Episode, PolicyParams, RewardConfig, SelectionMode};
pub use textenc::{EncoderParams, OptConfig, PredictorParams};
pub use train::{EvalMetric, EvalMode, PipelineConfig, TaskKind};
