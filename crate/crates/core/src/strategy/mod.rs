//! The search-strategy contract and the built-in strategies.
//!
//! A strategy is bound to a space, proposes `(configuration, fidelity)`
//! pairs with `generate_tasks`, and learns from `handle_rewards`. Rewards are
//! canonical losses: lower is better. All strategy state, including the RNG,
//! serializes so a job can be checkpointed and resumed with identical
//! future proposals.

mod evolution;
mod hyperband;
mod random;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bo::{BoConfig, BoStrategy};
use crate::space::{Configuration, SearchSpace};

pub use evolution::Evolution;
pub use hyperband::{hyperband_schedule, Bracket, Hyperband, HyperbandPlan, Round};
pub use random::RandomSearch;

pub type Result<T, E = StrategyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrategyError {
    #[error("no search space is bound")]
    Unbound,
    #[error("task {0} was not generated by this strategy")]
    UnknownTask(TaskId),
    #[error("task {0} already has a reward")]
    DuplicateTask(TaskId),
    #[error("reward for task {0} is not finite")]
    NonFinite(TaskId),
    #[error("no observations to evolve from")]
    EmptyObservations,
    #[error("invalid hyperband parameters: {0}")]
    InvalidPlan(String),
    #[error("surrogate failure: {0}")]
    Surrogate(String),
}

/// Per-job task identifier; ordering is generation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityBudget {
    pub resource: f64,
    pub is_final: bool,
}

impl FidelityBudget {
    pub fn full(resource: f64) -> Self {
        FidelityBudget {
            resource,
            is_final: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub task_id: TaskId,
    pub config: Configuration,
    pub fidelity: FidelityBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub task_id: TaskId,
    pub config: Configuration,
    /// Encoding under the space bound when the observation was ingested.
    #[serde(default)]
    pub encoded: Vec<f64>,
    pub fidelity: FidelityBudget,
    /// Canonical loss (minimized).
    pub reward: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl Observation {
    pub fn new(task_id: TaskId, config: Configuration, fidelity: FidelityBudget, reward: f64) -> Self {
        Observation {
            task_id,
            config,
            encoded: Vec::new(),
            fidelity,
            reward,
            metrics: BTreeMap::new(),
        }
    }
}

pub trait SearchStrategy {
    fn bind_space(&mut self, space: Arc<SearchSpace>);

    fn space(&self) -> Option<&Arc<SearchSpace>>;

    /// Up to `batch` new proposals. An empty result means the strategy is
    /// waiting on outstanding results (or is exhausted, see
    /// [`SearchStrategy::is_exhausted`]).
    fn generate_tasks(&mut self, batch: usize) -> Result<Vec<Proposal>>;

    fn handle_rewards(&mut self, rewards: Vec<Observation>) -> Result<()>;

    /// Tasks that will not report in the current round (failed or timed
    /// out). A timed-out task may still report later through
    /// `handle_rewards`.
    fn handle_lost(&mut self, _ids: &[TaskId]) {}

    fn observations(&self) -> &[Observation];

    fn is_exhausted(&self) -> bool {
        false
    }
}

/// State shared by every strategy: bound space, observation set, issued
/// task ledger and RNG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyCore {
    pub space: Option<Arc<SearchSpace>>,
    pub observations: Vec<Observation>,
    /// Every proposal ever issued, indexed by task id.
    pub issued: Vec<Proposal>,
    observed: BTreeSet<TaskId>,
    next_id: u64,
    pub rng: ChaCha8Rng,
}

impl StrategyCore {
    pub fn new(seed: u64) -> Self {
        StrategyCore {
            space: None,
            observations: Vec::new(),
            issued: Vec::new(),
            observed: BTreeSet::new(),
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn space(&self) -> Result<Arc<SearchSpace>> {
        self.space.clone().ok_or(StrategyError::Unbound)
    }

    pub fn issue(&mut self, config: Configuration, fidelity: FidelityBudget) -> Proposal {
        let proposal = Proposal {
            task_id: TaskId(self.next_id),
            config,
            fidelity,
        };
        self.next_id += 1;
        self.issued.push(proposal.clone());
        proposal
    }

    /// Proposals that have neither reported nor been dropped.
    pub fn pending(&self) -> impl Iterator<Item = &Proposal> {
        self.issued.iter().filter(|p| !self.observed.contains(&p.task_id))
    }

    pub fn issued_count(&self) -> u64 {
        self.next_id
    }

    /// Validates the whole batch first, then appends.
    pub fn ingest(&mut self, rewards: Vec<Observation>) -> Result<Vec<Observation>> {
        let mut seen = BTreeSet::new();
        for obs in &rewards {
            if obs.task_id.0 >= self.next_id {
                return Err(StrategyError::UnknownTask(obs.task_id));
            }
            if self.observed.contains(&obs.task_id) || !seen.insert(obs.task_id) {
                return Err(StrategyError::DuplicateTask(obs.task_id));
            }
            if !obs.reward.is_finite() {
                return Err(StrategyError::NonFinite(obs.task_id));
            }
        }
        let space = self.space.clone();
        let mut added = Vec::with_capacity(rewards.len());
        for mut obs in rewards {
            if let Some(space) = &space {
                obs.encoded = space.encode_projected(&obs.config);
            }
            self.observed.insert(obs.task_id);
            self.observations.push(obs.clone());
            added.push(obs);
        }
        Ok(added)
    }

    /// The lowest-loss observation; ties go to the earlier task.
    pub fn best(&self) -> Option<&Observation> {
        self.observations
            .iter()
            .min_by(|a, b| a.reward.total_cmp(&b.reward).then(a.task_id.cmp(&b.task_id)))
    }
}

/// Strategy selection and parameters as they appear in a job document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyConfig {
    Random,
    Hyperband {
        #[serde(default = "default_eta")]
        eta: f64,
    },
    Evolution {
        #[serde(default = "default_population")]
        population: usize,
        #[serde(default = "default_sample")]
        sample: usize,
    },
    Bo(BoConfig),
}

fn default_eta() -> f64 {
    3.0
}
fn default_population() -> usize {
    20
}
fn default_sample() -> usize {
    5
}

impl StrategyConfig {
    pub fn name(&self) -> String {
        match self {
            StrategyConfig::Random => "random".into(),
            StrategyConfig::Hyperband { .. } => "hyperband".into(),
            StrategyConfig::Evolution { .. } => "evolution".into(),
            StrategyConfig::Bo(c) => format!("bo-{}", c.surrogate.name()),
        }
    }
}

/// Closed set of shipped strategies; the serializable form of a running
/// strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random(RandomSearch),
    Hyperband(Hyperband),
    Evolution(Evolution),
    Bo(Box<BoStrategy>),
}

impl Strategy {
    /// `max_resource` is the full-fidelity budget (hyperband's R).
    pub fn from_config(config: &StrategyConfig, seed: u64, max_resource: f64) -> Result<Self> {
        Ok(match config {
            StrategyConfig::Random => Strategy::Random(RandomSearch::new(seed, max_resource)),
            StrategyConfig::Hyperband { eta } => {
                Strategy::Hyperband(Hyperband::new(seed, hyperband_schedule(max_resource, *eta)?))
            }
            StrategyConfig::Evolution { population, sample } => {
                Strategy::Evolution(Evolution::new(seed, max_resource, *population, *sample))
            }
            StrategyConfig::Bo(c) => Strategy::Bo(Box::new(BoStrategy::new(seed, max_resource, c.clone()))),
        })
    }

    fn inner(&self) -> &dyn SearchStrategy {
        match self {
            Strategy::Random(s) => s,
            Strategy::Hyperband(s) => s,
            Strategy::Evolution(s) => s,
            Strategy::Bo(s) => s.as_ref(),
        }
    }

    fn inner_mut(&mut self) -> &mut dyn SearchStrategy {
        match self {
            Strategy::Random(s) => s,
            Strategy::Hyperband(s) => s,
            Strategy::Evolution(s) => s,
            Strategy::Bo(s) => s.as_mut(),
        }
    }
}

impl SearchStrategy for Strategy {
    fn bind_space(&mut self, space: Arc<SearchSpace>) {
        self.inner_mut().bind_space(space)
    }
    fn space(&self) -> Option<&Arc<SearchSpace>> {
        self.inner().space()
    }
    fn generate_tasks(&mut self, batch: usize) -> Result<Vec<Proposal>> {
        self.inner_mut().generate_tasks(batch)
    }
    fn handle_rewards(&mut self, rewards: Vec<Observation>) -> Result<()> {
        self.inner_mut().handle_rewards(rewards)
    }
    fn handle_lost(&mut self, ids: &[TaskId]) {
        self.inner_mut().handle_lost(ids)
    }
    fn observations(&self) -> &[Observation] {
        self.inner().observations()
    }
    fn is_exhausted(&self) -> bool {
        self.inner().is_exhausted()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Evaluates every proposal with `f` and feeds the rewards back.
    pub fn answer(
        strategy: &mut dyn SearchStrategy,
        proposals: &[Proposal],
        f: impl Fn(&Configuration) -> f64,
    ) {
        let rewards = proposals
            .iter()
            .map(|p| Observation::new(p.task_id, p.config.clone(), p.fidelity, f(&p.config)))
            .collect();
        strategy.handle_rewards(rewards).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::fixtures::listing;

    #[test]
    fn ingest_rejects_unknown_and_duplicates_atomically() {
        let mut core = StrategyCore::new(0);
        core.space = Some(Arc::new(listing()));
        let p = core.issue(listing().sample(1), FidelityBudget::full(1.0));
        let ok = Observation::new(p.task_id, p.config.clone(), p.fidelity, 0.5);
        let unknown = Observation::new(TaskId(99), p.config.clone(), p.fidelity, 0.5);
        assert_eq!(
            core.ingest(vec![ok.clone(), unknown]).unwrap_err(),
            StrategyError::UnknownTask(TaskId(99))
        );
        assert!(core.observations.is_empty());
        core.ingest(vec![ok.clone()]).unwrap();
        assert_eq!(core.observations[0].encoded.len(), listing().dimension());
        assert_eq!(core.ingest(vec![ok]).unwrap_err(), StrategyError::DuplicateTask(p.task_id));
    }

    #[test]
    fn strategy_round_trips_through_json() {
        let mut s = Strategy::from_config(&StrategyConfig::Random, 3, 1.0).unwrap();
        s.bind_space(Arc::new(listing()));
        let first = s.generate_tasks(2).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let mut resumed: Strategy = serde_json::from_str(&json).unwrap();
        assert_eq!(s.generate_tasks(3).unwrap(), resumed.generate_tasks(3).unwrap());
        assert_eq!(first.len(), 2);
    }

    #[test]
    fn config_document_shape() {
        let c: StrategyConfig = serde_json::from_str(r#"{"kind":"hyperband","eta":3}"#).unwrap();
        assert_eq!(c, StrategyConfig::Hyperband { eta: 3.0 });
        let c: StrategyConfig = serde_json::from_str(r#"{"kind":"evolution"}"#).unwrap();
        assert_eq!(c, StrategyConfig::Evolution { population: 20, sample: 5 });
    }
}
