//! Evaluation metrics, training rewards and per-task reports over model
//! outputs.

mod metrics;
mod report;
mod reward;

use thiserror::Error;

pub use metrics::{auroc, entity_f1, yes_probability, Prf};
pub use report::{build_report, read_outputs, EvalReport, ModelOutput, Stat, TaskReport, BOOTSTRAP_RESAMPLES};
pub use reward::{
    accuracy_reward, extract_prediction, format_reward, parse_entities, total_reward, RewardAssignment, RewardConfig,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold answer is empty")]
    EmptyTruth,
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("auroc needs at least one {0} label")]
    MissingClass(&'static str),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("outputs without gold samples: {}", .0.join(", "))]
    Unmatched(Vec<String>),
    #[error("sample {0} has more than one output")]
    Duplicate(String),
    #[error("sample {0}: yes and no logits must both be present or both absent")]
    HalfLogits(String),
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
}
