//! Analysis over an observation snapshot: parameter importance, pairwise
//! marginals, a 2D projection of evaluated configurations and range-shrink
//! suggestions.

mod fanova;
mod projection;
mod shrink;

pub use fanova::{importance, pairwise_marginal, ImportanceReport, Marginal2d, ParamImportance};
pub use projection::{gower_distance, project_2d, ProjectedPoint};
pub use shrink::{suggest_space, FlaggedValues, SpaceSuggestion};

use crate::space::SearchSpace;
use crate::strategy::Observation;

pub const MIN_OBSERVATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdvisorError {
    #[error("need at least {need} observations, have {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("unknown parameter `{0}`")]
    UnknownPath(String),
}

/// Encodings under `space` (projected) and rewards.
pub(crate) fn training_set(observations: &[Observation], space: &SearchSpace) -> (Vec<Vec<f64>>, Vec<f64>) {
    observations
        .iter()
        .map(|o| (space.encode_projected(&o.config), o.reward))
        .unzip()
}
