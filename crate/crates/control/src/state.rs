//! The service's event-sourced state: every change is a [`LogRecord`],
//! and [`ServiceState::apply`] folds records in order.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use hopper_core::advisor::{ImportanceReport, SpaceSuggestion};
use hopper_core::space::{Configuration, SearchSpace};
use hopper_core::strategy::{FidelityBudget, Observation, TaskId};
use hopper_estimator::{IterationLedger, JobStatus};
use hopper_fabric::{BrokerEvent, Lease, Task, TaskOutcome, TaskState};
use serde::{Deserialize, Serialize};

use crate::formatter::KnowledgeRecord;
use crate::spec::JobSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMeta {
    pub id: String,
    /// Submission order, from 1.
    pub number: u64,
    pub spec: JobSpec,
    pub space_id: String,
    pub space_version: u64,
    pub estimated_duration: Option<f64>,
    pub rationale: Vec<String>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedRow {
    pub task: u64,
    pub scalar: f64,
    pub loss: f64,
    pub late: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub meta: JobMeta,
    pub status: JobStatus,
    pub diagnostic: Option<String>,
    pub stage: Option<String>,
    pub space_version: u64,
    pub observations: Vec<ObservedRow>,
    pub timed_out: BTreeSet<u64>,
    pub ledgers: Vec<IterationLedger>,
    /// Latest sealed estimator checkpoint.
    pub checkpoint: Option<String>,
    pub importance: Option<ImportanceReport>,
    pub suggestion: Option<SpaceSuggestion>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogRecord {
    Space(SearchSpace),
    JobSubmitted {
        meta: JobMeta,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    JobStatus {
        job: String,
        status: JobStatus,
        diagnostic: Option<String>,
        at: DateTime<Utc>,
    },
    Stage {
        job: String,
        stage: String,
    },
    Task(BrokerEvent),
    Observed {
        job: String,
        #[serde(flatten)]
        row: ObservedRow,
    },
    TimedOut {
        job: String,
        task: u64,
        iteration: u64,
    },
    Iteration {
        job: String,
        ledger: IterationLedger,
    },
    Checkpoint {
        job: String,
        sealed: String,
    },
    SpaceRebound {
        job: String,
        space_id: String,
        version: u64,
    },
    Advice {
        job: String,
        importance: Option<ImportanceReport>,
        suggestion: Option<SpaceSuggestion>,
    },
    Knowledge(KnowledgeRecord),
    Snapshot(Box<ServiceState>),
}

/// The job a task queue belongs to (`job~smoke` belongs to `job`).
pub fn owner(queue: &str) -> &str {
    queue.split('~').next().unwrap_or(queue)
}

impl LogRecord {
    pub fn job(&self) -> Option<&str> {
        match self {
            LogRecord::JobSubmitted { meta, .. } => Some(&meta.id),
            LogRecord::JobStatus { job, .. }
            | LogRecord::Stage { job, .. }
            | LogRecord::Observed { job, .. }
            | LogRecord::TimedOut { job, .. }
            | LogRecord::Iteration { job, .. }
            | LogRecord::Checkpoint { job, .. }
            | LogRecord::SpaceRebound { job, .. }
            | LogRecord::Advice { job, .. } => Some(job),
            LogRecord::Task(e) => Some(owner(&e.key().job)),
            LogRecord::Space(_) | LogRecord::Knowledge(_) | LogRecord::Snapshot(_) => None,
        }
    }

    /// Event name on the live stream.
    pub fn kind(&self) -> &'static str {
        match self {
            LogRecord::Space(_) => "space",
            LogRecord::JobSubmitted { .. } => "submitted",
            LogRecord::JobStatus { .. } => "status",
            LogRecord::Stage { .. } => "stage",
            LogRecord::Task(_) => "task",
            LogRecord::Observed { .. } => "observed",
            LogRecord::TimedOut { .. } => "timed_out",
            LogRecord::Iteration { .. } => "iteration",
            LogRecord::Checkpoint { .. } => "checkpoint",
            LogRecord::SpaceRebound { .. } => "space_rebound",
            LogRecord::Advice { .. } => "advice",
            LogRecord::Knowledge(_) => "knowledge",
            LogRecord::Snapshot(_) => "snapshot",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    /// Number of records folded so far.
    pub seq: u64,
    pub jobs: BTreeMap<String, JobRecord>,
    /// Task mirror per queue.
    pub tasks: BTreeMap<String, BTreeMap<u64, Task>>,
    pub spaces: Vec<SearchSpace>,
    pub knowledge: Vec<KnowledgeRecord>,
    pub idempotency: BTreeMap<String, String>,
}

impl ServiceState {
    pub fn replay<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Self {
        let mut s = ServiceState::default();
        records.into_iter().for_each(|r| s.apply(r));
        s
    }

    pub fn apply(&mut self, record: &LogRecord) {
        if let LogRecord::Snapshot(state) = record {
            *self = (**state).clone();
            return;
        }
        self.seq += 1;
        match record {
            LogRecord::Space(space) => self.spaces.push(space.clone()),
            LogRecord::JobSubmitted { meta, idempotency_key } => {
                if let Some(k) = idempotency_key {
                    self.idempotency.insert(k.clone(), meta.id.clone());
                }
                self.jobs.insert(
                    meta.id.clone(),
                    JobRecord {
                        meta: meta.clone(),
                        status: JobStatus::Pending,
                        diagnostic: None,
                        stage: None,
                        space_version: meta.space_version,
                        observations: Vec::new(),
                        timed_out: BTreeSet::new(),
                        ledgers: Vec::new(),
                        checkpoint: None,
                        importance: None,
                        suggestion: None,
                        updated_at: meta.submitted_at,
                    },
                );
            }
            LogRecord::JobStatus { job, status, diagnostic, at } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    j.status = status.clone();
                    j.diagnostic = diagnostic.clone();
                    j.updated_at = *at;
                }
            }
            LogRecord::Stage { job, stage } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    j.stage = Some(stage.clone());
                }
            }
            LogRecord::Task(event) => self.apply_task(event),
            LogRecord::Observed { job, row } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    j.timed_out.remove(&row.task);
                    match j.observations.iter_mut().find(|o| o.task == row.task) {
                        Some(o) => *o = row.clone(),
                        None => j.observations.push(row.clone()),
                    }
                }
            }
            LogRecord::TimedOut { job, task, .. } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    j.timed_out.insert(*task);
                }
            }
            LogRecord::Iteration { job, ledger } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    match j.ledgers.iter_mut().find(|l| l.iteration == ledger.iteration) {
                        Some(l) => *l = ledger.clone(),
                        None => j.ledgers.push(ledger.clone()),
                    }
                }
            }
            LogRecord::Checkpoint { job, sealed } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    j.checkpoint = Some(sealed.clone());
                }
            }
            LogRecord::SpaceRebound { job, version, .. } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    j.space_version = *version;
                }
            }
            LogRecord::Advice {
                job,
                importance,
                suggestion,
            } => {
                if let Some(j) = self.jobs.get_mut(job) {
                    j.importance = importance.clone();
                    j.suggestion = suggestion.clone();
                }
            }
            LogRecord::Knowledge(k) => self.knowledge.push(k.clone()),
            LogRecord::Snapshot(_) => unreachable!("handled above"),
        }
    }

    fn apply_task(&mut self, event: &BrokerEvent) {
        if let BrokerEvent::Published { task } = event {
            self.tasks
                .entry(task.key.job.clone())
                .or_default()
                .insert(task.key.seq, (**task).clone());
            return;
        }
        let key = event.key();
        let Some(task) = self.tasks.get_mut(&key.job).and_then(|q| q.get_mut(&key.seq)) else {
            return;
        };
        match event {
            BrokerEvent::Published { .. } | BrokerEvent::DuplicateIgnored { .. } => {}
            BrokerEvent::Reserved { worker, attempt, at, .. } => {
                task.state = TaskState::Reserved;
                task.attempts = *attempt;
                task.started_at = Some(*at);
                task.lease = Some(Lease {
                    worker: worker.clone(),
                    expires_at: *at,
                });
            }
            BrokerEvent::Started { .. } => task.state = TaskState::Running,
            BrokerEvent::Requeued { attempts, .. } => {
                task.state = TaskState::Pending;
                task.attempts = *attempts;
                task.lease = None;
                task.started_at = None;
            }
            BrokerEvent::Completed { record, at, .. } => {
                task.state = TaskState::Completed;
                task.outcome = Some(TaskOutcome::Completed { record: record.clone() });
                task.lease = None;
                task.finished_at = Some(*at);
                task.started_at = task.started_at.or(Some(task.enqueued_at));
            }
            BrokerEvent::Failed { diagnostic, at, .. } => {
                task.state = TaskState::Failed;
                task.outcome = Some(TaskOutcome::Failed {
                    diagnostic: diagnostic.clone(),
                });
                task.lease = None;
                task.finished_at = Some(*at);
            }
        }
    }

    pub fn space(&self, id: &str, version: u64) -> Option<&SearchSpace> {
        self.spaces.iter().find(|s| s.id == id && s.version == version)
    }

    pub fn job_tasks(&self, job: &str) -> impl Iterator<Item = &Task> {
        self.tasks.get(job).into_iter().flat_map(|q| q.values())
    }

    /// Observations of a job rebuilt from the task mirror, in ingestion
    /// order.
    pub fn observations(&self, job: &str) -> Vec<Observation> {
        let Some(rec) = self.jobs.get(job) else { return Vec::new() };
        let tasks = self.tasks.get(job);
        rec.observations
            .iter()
            .filter_map(|row| {
                let t = tasks?.get(&row.task)?;
                let mut o = Observation::new(TaskId(row.task), t.config.clone(), t.fidelity, row.loss);
                if let Some(r) = t.record() {
                    o.metrics = r.all_metrics();
                }
                Some(o)
            })
            .collect()
    }

    pub fn summary(&self, job: &str) -> Option<JobSummary> {
        let rec = self.jobs.get(job)?;
        let tasks: Vec<&Task> = self.job_tasks(job).collect();
        let count = |s: TaskState| tasks.iter().filter(|t| t.state == s).count();
        let spec = &rec.meta.spec;
        let objective = &spec.objective;
        let best = rec
            .observations
            .iter()
            .filter(|o| tasks.iter().any(|t| t.key.seq == o.task && t.fidelity.is_final))
            .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.task.cmp(&b.task)))
            .and_then(|o| {
                let t = self.tasks.get(job)?.get(&o.task)?;
                Some(BestCandidate {
                    task: o.task,
                    scalar: o.scalar,
                    config: t.config.clone(),
                })
            });
        let durations: Vec<f64> = tasks
            .iter()
            .filter(|t| t.state == TaskState::Completed)
            .filter_map(|t| t.duration())
            .collect();
        Some(JobSummary {
            id: rec.meta.id.clone(),
            name: spec.name.clone(),
            status: rec.status.clone(),
            diagnostic: rec.diagnostic.clone(),
            stage: rec.stage.clone(),
            strategy: spec.strategy.as_ref().map(|s| s.name()).unwrap_or_default(),
            objective: objective.key.clone(),
            direction: objective.direction,
            space_id: rec.meta.space_id.clone(),
            space_version: rec.space_version,
            iterations: rec.ledgers.len(),
            published: tasks.len(),
            completed: count(TaskState::Completed),
            failed: count(TaskState::Failed),
            observed: rec.observations.len(),
            best,
            mean_duration: (!durations.is_empty()).then(|| durations.iter().sum::<f64>() / durations.len() as f64),
            estimated_duration: rec.meta.estimated_duration,
            submitted_at: rec.meta.submitted_at,
            updated_at: rec.updated_at,
        })
    }

    /// Tasks with their rewards, in task order.
    pub fn candidates(&self, job: &str) -> Vec<Candidate> {
        let Some(rec) = self.jobs.get(job) else { return Vec::new() };
        let rows: BTreeMap<u64, &ObservedRow> = rec.observations.iter().map(|o| (o.task, o)).collect();
        self.job_tasks(job)
            .map(|t| {
                let row = rows.get(&t.key.seq);
                let state = if t.state.is_resolved() || !rec.timed_out.contains(&t.key.seq) {
                    t.state
                } else {
                    TaskState::Timeout
                };
                Candidate {
                    task_id: t.key.seq,
                    iteration: t.iteration,
                    state,
                    scalar_reward: row.map(|r| r.scalar),
                    loss: row.map(|r| r.loss),
                    late: row.is_some_and(|r| r.late),
                    duration_s: t.duration(),
                    attempts: t.attempts,
                    fidelity: t.fidelity,
                    config: t.config.clone(),
                    metrics: t.record().map(|r| r.all_metrics()).unwrap_or_default(),
                    diagnostic: match &t.outcome {
                        Some(TaskOutcome::Failed { diagnostic }) => Some(diagnostic.clone()),
                        _ => None,
                    },
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCandidate {
    pub task: u64,
    pub scalar: f64,
    pub config: Configuration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub name: String,
    pub status: JobStatus,
    pub diagnostic: Option<String>,
    pub stage: Option<String>,
    pub strategy: String,
    pub objective: String,
    pub direction: hopper_fabric::Direction,
    pub space_id: String,
    pub space_version: u64,
    pub iterations: usize,
    pub published: usize,
    pub completed: usize,
    pub failed: usize,
    pub observed: usize,
    pub best: Option<BestCandidate>,
    pub mean_duration: Option<f64>,
    pub estimated_duration: Option<f64>,
    pub submitted_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub task_id: u64,
    pub iteration: u64,
    pub state: TaskState,
    pub scalar_reward: Option<f64>,
    pub loss: Option<f64>,
    pub late: bool,
    pub duration_s: Option<f64>,
    pub attempts: u32,
    pub fidelity: FidelityBudget,
    pub config: Configuration,
    pub metrics: BTreeMap<String, f64>,
    pub diagnostic: Option<String>,
}
