use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FidelityBudget, Observation, Proposal, Result, SearchStrategy, StrategyCore};
use crate::space::SearchSpace;

/// Independent uniform draws at full fidelity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomSearch {
    core: StrategyCore,
    resource: f64,
}

impl RandomSearch {
    pub fn new(seed: u64, resource: f64) -> Self {
        RandomSearch {
            core: StrategyCore::new(seed),
            resource,
        }
    }
}

impl SearchStrategy for RandomSearch {
    fn bind_space(&mut self, space: Arc<SearchSpace>) {
        self.core.space = Some(space);
    }

    fn space(&self) -> Option<&Arc<SearchSpace>> {
        self.core.space.as_ref()
    }

    fn generate_tasks(&mut self, batch: usize) -> Result<Vec<Proposal>> {
        let space = self.core.space()?;
        let fidelity = FidelityBudget::full(self.resource);
        Ok((0..batch)
            .map(|_| {
                let config = space.sample_with(&mut self.core.rng);
                self.core.issue(config, fidelity)
            })
            .collect())
    }

    fn handle_rewards(&mut self, rewards: Vec<Observation>) -> Result<()> {
        self.core.ingest(rewards).map(|_| ())
    }

    fn observations(&self) -> &[Observation] {
        &self.core.observations
    }
}
