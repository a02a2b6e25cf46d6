use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{encoding_key, suggest_batch, BatchContext, BoConfig};
use crate::space::{Configuration, SearchSpace};
use crate::strategy::{
    FidelityBudget, Observation, Proposal, Result, SearchStrategy, StrategyCore, StrategyError, TaskId,
};

/// Bayesian optimization as a search strategy: `n_init` random draws, then
/// constant-liar batches from the configured surrogate and acquisition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoStrategy {
    core: StrategyCore,
    resource: f64,
    config: BoConfig,
    lost: BTreeSet<TaskId>,
    exhausted: bool,
}

impl BoStrategy {
    pub fn new(seed: u64, resource: f64, config: BoConfig) -> Self {
        BoStrategy {
            core: StrategyCore::new(seed),
            resource,
            config,
            lost: BTreeSet::new(),
            exhausted: false,
        }
    }

    pub fn config(&self) -> &BoConfig {
        &self.config
    }

    fn pending_encodings(&self, space: &SearchSpace) -> Vec<Vec<f64>> {
        self.core
            .pending()
            .filter(|p| !self.lost.contains(&p.task_id))
            .map(|p| space.encode_projected(&p.config))
            .collect()
    }

    /// A random configuration not yet seen, when the space is small enough
    /// to make repeats likely.
    fn fresh_sample(&mut self, space: &SearchSpace, seen: &mut HashSet<Vec<u64>>) -> Option<Configuration> {
        let finite = space.size().is_some();
        for _ in 0..if finite { 200 } else { 1 } {
            let c = space.sample_with(&mut self.core.rng);
            if seen.insert(encoding_key(&space.encode_projected(&c))) || !finite {
                return Some(c);
            }
        }
        None
    }
}

impl SearchStrategy for BoStrategy {
    fn bind_space(&mut self, space: Arc<SearchSpace>) {
        self.exhausted = false;
        self.core.space = Some(space);
    }

    fn space(&self) -> Option<&Arc<SearchSpace>> {
        self.core.space.as_ref()
    }

    fn generate_tasks(&mut self, batch: usize) -> Result<Vec<Proposal>> {
        let space = self.core.space()?;
        let fidelity = FidelityBudget::full(self.resource);
        let pending = self.pending_encodings(&space);
        let x: Vec<Vec<f64>> = self.core.observations.iter().map(|o| space.encode_projected(&o.config)).collect();
        let y: Vec<f64> = self.core.observations.iter().map(|o| o.reward).collect();
        let mut seen: HashSet<Vec<u64>> = x.iter().chain(&pending).map(|e| encoding_key(e)).collect();

        let mut configs = Vec::new();
        let init_left = (self.config.n_init as u64).saturating_sub(self.core.issued_count()) as usize;
        let random = if x.is_empty() { batch } else { init_left.min(batch) };
        for _ in 0..random {
            match self.fresh_sample(&space, &mut seen) {
                Some(c) => configs.push(c),
                None => break,
            }
        }
        let q = batch - random;
        if q > 0 {
            let incumbent = self.core.best().map(|o| o.config.clone());
            let mut ctx = BatchContext {
                pending,
                liar_value: None,
            };
            ctx.pending.extend(configs.iter().map(|c| space.encode_projected(c)));
            let result = suggest_batch(&space, &self.config, &x, &y, incumbent.as_ref(), q, &ctx, &mut self.core.rng)
                .map_err(|e| StrategyError::Surrogate(e.to_string()))?;
            if result.truncated && result.chosen.is_empty() && configs.is_empty() {
                self.exhausted = true;
            }
            configs.extend(result.chosen.into_iter().map(|c| c.config));
        }
        Ok(configs.into_iter().map(|c| self.core.issue(c, fidelity)).collect())
    }

    fn handle_rewards(&mut self, rewards: Vec<Observation>) -> Result<()> {
        let added = self.core.ingest(rewards)?;
        for o in added {
            self.lost.remove(&o.task_id);
        }
        Ok(())
    }

    fn handle_lost(&mut self, ids: &[TaskId]) {
        self.lost.extend(ids.iter().copied());
    }

    fn observations(&self) -> &[Observation] {
        &self.core.observations
    }

    fn is_exhausted(&self) -> bool {
        self.exhausted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bo::SurrogateKind;
    use crate::space::{parse_space, Value};
    use crate::strategy::testing::answer;

    fn quad(c: &Configuration) -> f64 {
        let f = |k: &str| match c.get(k) {
            Some(Value::Float(v)) => *v,
            _ => 0.0,
        };
        (f("x") - 0.3).powi(2) + (f("y") + 0.2).powi(2)
    }

    #[test]
    fn trajectory_is_reproducible_and_improves() {
        let space = Arc::new(parse_space("x:\n  type: float\n  range: [-1.0...1.0]\ny:\n  type: float\n  range: [-1.0...1.0]\n").unwrap());
        let run = || {
            let mut bo = BoStrategy::new(11, 1.0, BoConfig::default());
            bo.bind_space(space.clone());
            for _ in 0..6 {
                let tasks = bo.generate_tasks(3).unwrap();
                answer(&mut bo, &tasks, quad);
            }
            bo
        };
        let (a, b) = (run(), run());
        assert_eq!(a.observations(), b.observations());
        let best = a.core.best().unwrap().reward;
        assert!(best < 0.05, "best {best}");
    }

    #[test]
    fn enumerable_space_exhausts_without_repeats() {
        let space = Arc::new(parse_space("a:\n  type: int\n  range: [0...2]\nb:\n  type: choice\n  range: {p, q}\n").unwrap());
        let mut bo = BoStrategy::new(1, 1.0, BoConfig::with_surrogate(SurrogateKind::Forest));
        bo.bind_space(space.clone());
        let mut seen = HashSet::new();
        for _ in 0..5 {
            let tasks = bo.generate_tasks(2).unwrap();
            for t in &tasks {
                assert!(seen.insert(encoding_key(&space.encode(&t.config).unwrap())));
            }
            answer(&mut bo, &tasks, |c| c.len() as f64);
        }
        assert_eq!(seen.len(), 6);
        assert!(bo.is_exhausted());
    }
}
