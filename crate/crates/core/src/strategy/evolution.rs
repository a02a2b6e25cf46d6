use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{FidelityBudget, Observation, Proposal, Result, SearchStrategy, StrategyCore, StrategyError};
use crate::space::{Configuration, SearchSpace};

/// Regularized (aging) evolution: tournaments of `sample` drawn from the
/// `population` most recently generated observations; the winner is
/// mutated in one parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evolution {
    core: StrategyCore,
    resource: f64,
    population: usize,
    sample: usize,
}

impl Evolution {
    pub fn new(seed: u64, resource: f64, population: usize, sample: usize) -> Self {
        Evolution {
            core: StrategyCore::new(seed),
            resource,
            population: population.max(1),
            sample: sample.max(1),
        }
    }

    /// One child from a tournament over the current population.
    pub fn evolve_step(&mut self) -> Result<Configuration> {
        let space = self.core.space()?;
        if self.core.observations.is_empty() {
            return Err(StrategyError::EmptyObservations);
        }
        let mut alive: Vec<&Observation> = self.core.observations.iter().collect();
        alive.sort_by_key(|o| o.task_id);
        let alive = &alive[alive.len().saturating_sub(self.population)..];
        let k = self.sample.min(alive.len());
        let parent = index::sample(&mut self.core.rng, alive.len(), k)
            .into_iter()
            .map(|i| alive[i])
            .min_by(|a, b| a.reward.total_cmp(&b.reward).then(a.task_id.cmp(&b.task_id)))
            .expect("tournament is non-empty");
        let parent = parent.config.clone();
        Ok(space.mutate(&parent, &mut self.core.rng).0)
    }
}

impl SearchStrategy for Evolution {
    fn bind_space(&mut self, space: Arc<SearchSpace>) {
        self.core.space = Some(space);
    }

    fn space(&self) -> Option<&Arc<SearchSpace>> {
        self.core.space.as_ref()
    }

    fn generate_tasks(&mut self, batch: usize) -> Result<Vec<Proposal>> {
        let space = self.core.space()?;
        let fidelity = FidelityBudget::full(self.resource);
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let config = if self.core.observations.is_empty() {
                space.sample_with(&mut self.core.rng)
            } else {
                self.evolve_step()?
            };
            out.push(self.core.issue(config, fidelity));
        }
        Ok(out)
    }

    fn handle_rewards(&mut self, rewards: Vec<Observation>) -> Result<()> {
        self.core.ingest(rewards).map(|_| ())
    }

    fn observations(&self) -> &[Observation] {
        &self.core.observations
    }
}
