//! Composable Bayesian optimization: surrogate, acquisition, candidate
//! generator, acquisition optimizer and batch suggester.

mod acquisition;
mod candidates;
mod gp;
mod strategy;
mod suggest;

use serde::{Deserialize, Serialize};

use crate::forest::{ForestConfig, ForestModel};
use crate::space::DimKind;

pub use acquisition::{acq_ei, acq_lcb, normal_cdf, normal_pdf, AcquisitionKind};
pub use candidates::{encoding_key, generate_candidates, optimize_acquisition, Candidate, PoolStrategy};
pub use gp::{fit_hyperparameters, log_marginal_likelihood, matern52, GpHyper, GpModel};
pub use strategy::BoStrategy;
pub use suggest::{suggest_batch, BatchContext, SuggestResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoError {
    #[error("training set is empty")]
    Empty,
    #[error("inconsistent dimensions")]
    DimMismatch,
    #[error("training data contains a non-finite value")]
    NonFinite,
    #[error("kernel matrix is not positive definite even with maximum jitter")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurrogatePosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// A fitted, immutable response-surface model.
pub trait Surrogate: Send + Sync {
    fn predict(&self, xq: &[Vec<f64>]) -> SurrogatePosterior;

    /// Same family and hyperparameters conditioned on a new training set.
    fn refit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn Surrogate>, BoError>;
}

impl Surrogate for GpModel {
    fn predict(&self, xq: &[Vec<f64>]) -> SurrogatePosterior {
        GpModel::predict(self, xq)
    }

    fn refit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn Surrogate>, BoError> {
        Ok(Box::new(GpModel::with_hyperparameters(x, y, self.hyper().clone())?))
    }
}

impl Surrogate for ForestModel {
    fn predict(&self, xq: &[Vec<f64>]) -> SurrogatePosterior {
        let (mean, variance) = xq.iter().map(|q| self.predict_one(q)).unzip();
        SurrogatePosterior { mean, variance }
    }

    fn refit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn Surrogate>, BoError> {
        if x.is_empty() {
            return Err(BoError::Empty);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(BoError::NonFinite);
        }
        Ok(Box::new(ForestModel::fit(x, y, self.kinds(), self.config())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    #[default]
    Gp,
    Forest,
}

impl SurrogateKind {
    pub fn name(&self) -> &'static str {
        match self {
            SurrogateKind::Gp => "gp",
            SurrogateKind::Forest => "forest",
        }
    }

    pub fn fit(
        &self,
        x: &[Vec<f64>],
        y: &[f64],
        kinds: &[DimKind],
        trees: usize,
        seed: u64,
    ) -> Result<Box<dyn Surrogate>, BoError> {
        match self {
            SurrogateKind::Gp => Ok(Box::new(GpModel::fit(x, y)?)),
            SurrogateKind::Forest => {
                let config = ForestConfig {
                    trees,
                    seed,
                    ..Default::default()
                };
                if x.is_empty() {
                    return Err(BoError::Empty);
                }
                if x.len() != y.len() {
                    return Err(BoError::DimMismatch);
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(BoError::NonFinite);
                }
                Ok(Box::new(ForestModel::fit(x, y, kinds, &config)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    #[serde(default)]
    pub surrogate: SurrogateKind,
    #[serde(default)]
    pub acquisition: AcquisitionKind,
    /// Random evaluations before the surrogate takes over.
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default)]
    pub pool: PoolStrategy,
}

fn default_n_init() -> usize {
    5
}
fn default_pool() -> usize {
    500
}
fn default_local_steps() -> usize {
    10
}
fn default_trees() -> usize {
    32
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            surrogate: SurrogateKind::default(),
            acquisition: AcquisitionKind::default(),
            n_init: default_n_init(),
            pool_size: default_pool(),
            local_steps: default_local_steps(),
            trees: default_trees(),
            pool: PoolStrategy::default(),
        }
    }
}

impl BoConfig {
    pub fn with_surrogate(surrogate: SurrogateKind) -> Self {
        BoConfig {
            surrogate,
            ..Default::default()
        }
    }
}
