use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use hopper_core::space::{Configuration, SpaceStore};
use hopper_core::strategy::{FidelityBudget, Observation, SearchStrategy, Strategy, StrategyConfig, StrategyError, TaskId};
use hopper_fabric::{combine_reward, Broker, BrokerError, ObjectiveSpec, Task, TaskKey, TaskState};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError};
use crate::ledger::IterationLedger;
use crate::stats::{DurationStats, TimeoutPolicy};

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("strategy error: {0}")]
    Strategy(#[from] StrategyError),
    #[error("broker error: {0}")]
    Broker(#[from] BrokerError),
    #[error("space error: {0}")]
    Space(#[from] hopper_core::space::SpaceError),
    #[error("space `{found}` is not in the lineage of `{expected}`")]
    Lineage { expected: String, found: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("no worker can make progress on iteration {0}")]
    Stalled(u64),
    #[error("invalid job: {0}")]
    Invalid(String),
}

impl EstimatorError {
    /// Whether the iteration may simply be run again.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EstimatorError::Broker(_) | EstimatorError::Stalled(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub job_id: String,
    pub strategy: StrategyConfig,
    pub objective: ObjectiveSpec,
    pub batch_size: usize,
    pub max_evaluations: usize,
    /// Full-fidelity resource (hyperband's R).
    #[serde(default = "one")]
    pub max_resource: f64,
    pub timeout: TimeoutPolicy,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.batch_size == 0 {
            return Err(EstimatorError::Invalid("batch size must be at least 1".into()));
        }
        if self.max_evaluations < self.batch_size {
            return Err(EstimatorError::Invalid("max evaluations must be at least the batch size".into()));
        }
        if !(self.timeout.t_max > 0.0) || self.timeout.t_min > self.timeout.t_max || self.timeout.k < 0.0 {
            return Err(EstimatorError::Invalid("timeout needs k >= 0 and 0 < t_min <= t_max".into()));
        }
        self.objective
            .validate()
            .map_err(|e| EstimatorError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Pending,
    Running,
    Complete,
    Failed,
    Stopped,
}

impl JobStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobStatus::Complete | JobStatus::Failed | JobStatus::Stopped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResult {
    pub task: u64,
    pub scalar: f64,
    pub loss: f64,
    pub config: Configuration,
}

/// Everything needed to continue a job; the unit of checkpointing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobState {
    pub config: EstimatorConfig,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub strategy: Strategy,
    pub space_id: String,
    pub space_version: u64,
    /// Index of the next iteration to run.
    pub iteration: u64,
    pub ledgers: Vec<IterationLedger>,
    pub stats: DurationStats,
    /// Timed-out tasks whose results have not arrived yet.
    pub late: BTreeSet<u64>,
    pub issued: usize,
    pub best: Option<BestResult>,
}

impl JobState {
    pub fn observations(&self) -> &[Observation] {
        self.strategy.observations()
    }

    /// Scalar reward (in the objective's own direction) per observed task.
    pub fn scalars(&self) -> BTreeMap<u64, f64> {
        self.observations()
            .iter()
            .map(|o| (o.task_id.0, self.config.objective.scalar(o.reward)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobEvent {
    StatusChanged {
        job: String,
        status: JobStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diagnostic: Option<String>,
    },
    IterationStarted {
        job: String,
        iteration: u64,
        tasks: Vec<u64>,
        timeouts: BTreeMap<String, f64>,
        at: f64,
    },
    Observed {
        job: String,
        task: u64,
        scalar: f64,
        loss: f64,
        late: bool,
        at: f64,
    },
    TimedOut {
        job: String,
        task: u64,
        iteration: u64,
    },
    IterationClosed {
        job: String,
        ledger: IterationLedger,
    },
    SpaceRebound {
        job: String,
        space_id: String,
        version: u64,
    },
}

pub trait JobObserver: Send + Sync {
    fn on_event(&self, event: &JobEvent);
}

impl<F: Fn(&JobEvent) + Send + Sync> JobObserver for F {
    fn on_event(&self, event: &JobEvent) {
        self(event)
    }
}

/// What one call to [`Estimator::run_iteration`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Iteration(IterationLedger),
    Finished(JobStatus),
}

/// One job's semisynchronous control loop over a shared broker.
pub struct Estimator {
    state: JobState,
    broker: Arc<Broker>,
    observer: Option<Arc<dyn JobObserver>>,
    stop: Arc<AtomicBool>,
}

impl Estimator {
    pub fn new(config: EstimatorConfig, space: Arc<hopper_core::space::SearchSpace>, broker: Arc<Broker>) -> Result<Self, EstimatorError> {
        config.validate()?;
        let mut strategy = Strategy::from_config(&config.strategy, config.seed, config.max_resource)?;
        let (space_id, space_version) = (space.id.clone(), space.version);
        strategy.bind_space(space);
        let state = JobState {
            config,
            status: JobStatus::Pending,
            diagnostic: None,
            strategy,
            space_id,
            space_version,
            iteration: 0,
            ledgers: Vec::new(),
            stats: DurationStats::default(),
            late: BTreeSet::new(),
            issued: 0,
            best: None,
        };
        Ok(Self::from_state(state, broker))
    }

    pub fn from_state(state: JobState, broker: Arc<Broker>) -> Self {
        Estimator {
            state,
            broker,
            observer: None,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Continues from a sealed checkpoint.
    pub fn resume(bytes: &[u8], broker: Arc<Broker>) -> Result<Self, EstimatorError> {
        Ok(Self::from_state(checkpoint::open(bytes)?, broker))
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        checkpoint::seal(&self.state)
    }

    pub fn with_observer(mut self, observer: Arc<dyn JobObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    /// Shares an externally owned stop flag.
    pub fn with_stop(mut self, stop: Arc<AtomicBool>) -> Self {
        self.stop = stop;
        self
    }

    pub fn state(&self) -> &JobState {
        &self.state
    }

    pub fn into_state(self) -> JobState {
        self.state
    }

    /// Raising the flag stops the job at the next iteration boundary; the
    /// running iteration stops waiting for tasks no worker has picked up.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    fn emit(&self, event: JobEvent) {
        if let Some(o) = &self.observer {
            o.on_event(&event);
        }
    }

    fn job(&self) -> String {
        self.state.config.job_id.clone()
    }

    fn set_status(&mut self, status: JobStatus, diagnostic: Option<String>) {
        if self.state.status == status {
            return;
        }
        self.state.status = status.clone();
        self.state.diagnostic = diagnostic.clone();
        self.emit(JobEvent::StatusChanged {
            job: self.job(),
            status,
            diagnostic,
        });
    }

    fn fail(&mut self, e: EstimatorError) -> EstimatorError {
        self.set_status(JobStatus::Failed, Some(e.to_string()));
        e
    }

    /// Runs iterations until the job reaches a terminal state. Retryable
    /// errors are returned to the caller with the job still RUNNING.
    pub fn run(&mut self) -> Result<JobStatus, EstimatorError> {
        loop {
            if let Step::Finished(status) = self.run_iteration()? {
                return Ok(status);
            }
        }
    }

    /// Generates a batch, publishes it, waits until every task resolved or
    /// passed its adaptive deadline, and ingests what came back.
    pub fn run_iteration(&mut self) -> Result<Step, EstimatorError> {
        if self.state.status.is_terminal() {
            return Ok(Step::Finished(self.state.status.clone()));
        }
        self.set_status(JobStatus::Running, None);
        if self.stop.load(Ordering::SeqCst) {
            self.set_status(JobStatus::Stopped, None);
            return Ok(Step::Finished(JobStatus::Stopped));
        }
        let remaining = self.state.config.max_evaluations.saturating_sub(self.state.issued);
        let proposals = if remaining == 0 || self.state.strategy.is_exhausted() {
            Vec::new()
        } else {
            let batch = self.state.config.batch_size.min(remaining);
            match self.state.strategy.generate_tasks(batch) {
                Ok(p) => p,
                Err(e) => return Err(self.fail(e.into())),
            }
        };
        if proposals.is_empty() {
            self.drain()?;
            self.set_status(JobStatus::Complete, None);
            return Ok(Step::Finished(JobStatus::Complete));
        }

        let clock = self.broker.clock().clone();
        let started = clock.now();
        let iteration = self.state.iteration;
        let policy = self.state.config.timeout;
        let mut timeouts = BTreeMap::new();
        let mut issued = Vec::with_capacity(proposals.len());
        for p in &proposals {
            let key = TaskKey::new(self.job(), p.task_id.0);
            let task = Task::new(key.clone(), iteration, p.config.clone(), p.fidelity);
            match self.broker.publish(task) {
                Ok(()) => {}
                // republished after a crash between publish and checkpoint
                Err(BrokerError::DuplicateTask(_)) if self.broker.get(&key).is_some_and(|t| t.config == p.config) => {}
                Err(e) => return Err(e.into()),
            }
            timeouts
                .entry(format!("{}", p.fidelity.resource))
                .or_insert_with(|| policy.timeout(&self.state.stats, &p.fidelity));
            issued.push(p.task_id.0);
        }
        self.state.issued += proposals.len();
        let deadline_of = |f: &FidelityBudget| timeouts[&format!("{}", f.resource)];
        let longest = timeouts.values().copied().fold(0.0, f64::max);
        let mut ledger = IterationLedger {
            iteration,
            issued: issued.clone(),
            batch_started_at: started,
            adaptive_deadline: started + longest,
            ..Default::default()
        };
        self.emit(JobEvent::IterationStarted {
            job: self.job(),
            iteration,
            tasks: issued.clone(),
            timeouts: timeouts.clone(),
            at: started,
        });

        let keys: Vec<TaskKey> = issued.iter().map(|&s| TaskKey::new(self.job(), s)).collect();
        let stop = self.stop.clone();
        let settled = self.broker.wait_until(f64::INFINITY, None, |table| {
            let stopping = stop.load(Ordering::SeqCst);
            keys.iter().all(|k| match table.get(k) {
                None => true,
                Some(t) if t.state.is_resolved() => true,
                Some(t) => match t.started_at {
                    Some(s) if t.state != TaskState::Pending => table.now >= s + deadline_of(&t.fidelity),
                    _ => stopping,
                },
            })
        });
        if !settled {
            // Nothing can run the tasks; they stay published and this
            // iteration's proposals are awaited late.
            self.state.late.extend(issued.iter().copied());
            self.state.strategy.handle_lost(&issued.iter().map(|&s| TaskId(s)).collect::<Vec<_>>());
            self.state.iteration += 1;
            return Err(EstimatorError::Stalled(iteration));
        }

        let mut lost = Vec::new();
        let mut fresh = Vec::new();
        for key in &keys {
            let Some(task) = self.broker.get(key) else {
                ledger.failed.insert(key.seq);
                lost.push(TaskId(key.seq));
                continue;
            };
            match task.state {
                TaskState::Completed => match self.observation(&task) {
                    Some(obs) => {
                        ledger.completed.insert(key.seq);
                        fresh.push((obs, false, task.duration()));
                    }
                    None => {
                        ledger.failed.insert(key.seq);
                        lost.push(TaskId(key.seq));
                    }
                },
                TaskState::Failed => {
                    ledger.failed.insert(key.seq);
                    lost.push(TaskId(key.seq));
                }
                _ => {
                    ledger.timed_out.insert(key.seq);
                    lost.push(TaskId(key.seq));
                    self.emit(JobEvent::TimedOut {
                        job: self.job(),
                        task: key.seq,
                        iteration,
                    });
                }
            }
        }
        for item in self.harvest_late() {
            ledger.late_ingested.push(item.0.task_id.0);
            fresh.push(item);
        }
        self.state.late.extend(ledger.timed_out.iter().copied());

        self.state.strategy.handle_lost(&lost);
        self.ingest(fresh)?;
        ledger.closed_at = Some(clock.now());
        self.state.ledgers.push(ledger.clone());
        self.state.iteration += 1;
        self.emit(JobEvent::IterationClosed {
            job: self.job(),
            ledger: ledger.clone(),
        });
        if self.stop.load(Ordering::SeqCst) {
            self.set_status(JobStatus::Stopped, None);
        }
        Ok(Step::Iteration(ledger))
    }

    /// Late tasks that have since resolved; those gone from the broker or
    /// failed leave the late set.
    fn harvest_late(&mut self) -> Vec<(Observation, bool, Option<f64>)> {
        let mut out = Vec::new();
        let late: Vec<u64> = self.state.late.iter().copied().collect();
        for seq in late {
            let task = self.broker.get(&TaskKey::new(self.job(), seq));
            match task {
                None => {
                    self.state.late.remove(&seq);
                }
                Some(t) if t.state == TaskState::Completed => {
                    self.state.late.remove(&seq);
                    if let Some(obs) = self.observation(&t) {
                        out.push((obs, true, t.duration()));
                    }
                }
                Some(t) if t.state == TaskState::Failed => {
                    self.state.late.remove(&seq);
                }
                Some(_) => {}
            }
        }
        out
    }

    /// Waits for outstanding late tasks before finishing. Like an iteration
    /// it parks while tasks are unresolved; a stop request cuts it short.
    fn drain(&mut self) -> Result<(), EstimatorError> {
        if self.state.late.is_empty() {
            return Ok(());
        }
        let keys: Vec<TaskKey> = self.state.late.iter().map(|&s| TaskKey::new(self.job(), s)).collect();
        let stop = self.stop.clone();
        self.broker.wait_until(f64::INFINITY, None, |table| {
            stop.load(Ordering::SeqCst) || keys.iter().all(|k| table.get(k).is_none_or(|t| t.state.is_resolved()))
        });
        let fresh = self.harvest_late();
        self.state.late.clear();
        self.ingest(fresh)
    }

    fn observation(&self, task: &Task) -> Option<Observation> {
        let record = task.record()?;
        let scalar = combine_reward(record, &self.state.config.objective).ok()?;
        let mut obs = Observation::new(
            TaskId(task.key.seq),
            task.config.clone(),
            task.fidelity,
            self.state.config.objective.loss(scalar),
        );
        obs.metrics = record.all_metrics();
        Some(obs)
    }

    fn ingest(&mut self, mut fresh: Vec<(Observation, bool, Option<f64>)>) -> Result<(), EstimatorError> {
        fresh.sort_by_key(|(o, _, _)| o.task_id);
        for (obs, _, duration) in &fresh {
            if let Some(d) = duration {
                self.state.stats.record(&obs.fidelity, *d);
            }
        }
        let at = self.broker.clock().now();
        let objective = self.state.config.objective.clone();
        for (obs, late, _) in &fresh {
            let scalar = objective.scalar(obs.reward);
            let better = match &self.state.best {
                None => true,
                Some(b) => obs.reward < b.loss || (obs.reward == b.loss && obs.task_id.0 < b.task),
            };
            if better && obs.fidelity.is_final {
                self.state.best = Some(BestResult {
                    task: obs.task_id.0,
                    scalar,
                    loss: obs.reward,
                    config: obs.config.clone(),
                });
            }
            self.emit(JobEvent::Observed {
                job: self.job(),
                task: obs.task_id.0,
                scalar,
                loss: obs.reward,
                late: *late,
                at,
            });
        }
        let batch: Vec<Observation> = fresh.into_iter().map(|(o, _, _)| o).collect();
        if let Err(e) = self.state.strategy.handle_rewards(batch) {
            return Err(self.fail(e.into()));
        }
        Ok(())
    }

    /// Rebinds the strategy to a newer version of the job's space. Tasks
    /// in flight keep their original configurations.
    pub fn apply_space_edit(&mut self, store: &SpaceStore, space_id: &str, version: u64) -> Result<(), EstimatorError> {
        let lineage = |found: String| EstimatorError::Lineage {
            expected: format!("{}@{}", self.state.space_id, self.state.space_version),
            found,
        };
        if space_id != self.state.space_id {
            return Err(lineage(format!("{space_id}@{version}")));
        }
        if version == self.state.space_version {
            return Ok(());
        }
        if !store.is_descendant(space_id, version, self.state.space_version) {
            return Err(lineage(format!("{space_id}@{version}")));
        }
        let space = store.get(space_id, version)?;
        self.state.strategy.bind_space(space);
        self.state.space_version = version;
        self.emit(JobEvent::SpaceRebound {
            job: self.job(),
            space_id: space_id.to_string(),
            version,
        });
        Ok(())
    }
}
