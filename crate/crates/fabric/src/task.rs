use std::collections::BTreeMap;
use std::fmt;

use hopper_core::space::Configuration;
use hopper_core::strategy::FidelityBudget;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub job: String,
    pub seq: u64,
}

impl TaskKey {
    pub fn new(job: impl Into<String>, seq: u64) -> Self {
        TaskKey { job: job.into(), seq }
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.job, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Pending,
    Reserved,
    Running,
    Completed,
    Failed,
    /// Estimator-side label for a task that missed its iteration deadline.
    Timeout,
}

impl TaskState {
    pub fn is_resolved(self) -> bool {
        matches!(self, TaskState::Completed | TaskState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub worker: String,
    pub expires_at: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardRecord {
    pub train_metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub deploy_metrics: BTreeMap<String, f64>,
    /// Filled by the controller from the objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_ref: Option<String>,
    /// Set when a configured probe failed; deploy metrics are then absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deploy_error: Option<String>,
}

impl RewardRecord {
    pub fn from_metrics(metrics: impl IntoIterator<Item = (String, f64)>) -> Self {
        RewardRecord {
            train_metrics: metrics.into_iter().collect(),
            ..Default::default()
        }
    }

    /// Train metrics overlaid with deploy metrics.
    pub fn all_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = self.train_metrics.clone();
        m.extend(self.deploy_metrics.iter().map(|(k, v)| (k.clone(), *v)));
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskOutcome {
    Completed { record: RewardRecord },
    Failed { diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub key: TaskKey,
    pub iteration: u64,
    pub config: Configuration,
    pub fidelity: FidelityBudget,
    pub state: TaskState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease: Option<Lease>,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TaskOutcome>,
    pub enqueued_at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<f64>,
}

impl Task {
    pub fn new(key: TaskKey, iteration: u64, config: Configuration, fidelity: FidelityBudget) -> Self {
        Task {
            key,
            iteration,
            config,
            fidelity,
            state: TaskState::Pending,
            lease: None,
            attempts: 0,
            outcome: None,
            enqueued_at: 0.0,
            started_at: None,
            finished_at: None,
        }
    }

    /// Wall-clock duration of the resolving attempt.
    pub fn duration(&self) -> Option<f64> {
        Some(self.finished_at? - self.started_at?)
    }

    pub fn record(&self) -> Option<&RewardRecord> {
        match &self.outcome {
            Some(TaskOutcome::Completed { record }) => Some(record),
            _ => None,
        }
    }
}

/// What a worker receives on reservation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub key: TaskKey,
    pub config: Configuration,
    pub fidelity: FidelityBudget,
    pub attempt: u32,
    pub lease_ttl: f64,
}
