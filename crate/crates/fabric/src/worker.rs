use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::broker::{ReportAck, TaskBroker};
use crate::evaluator::{deploy_probe, evaluate, EvalInput};
use crate::task::{RewardRecord, TaskOutcome, TaskView};

/// Something that turns a reserved task into metrics.
pub trait Evaluator: Send + Sync {
    /// Should return promptly once `cancel` is raised.
    fn evaluate(&self, task: &TaskView, cancel: &AtomicBool) -> Result<RewardRecord, String>;
}

/// Adapts a closure into an [`Evaluator`].
pub struct FnEvaluator<F>(pub F);

impl<F> Evaluator for FnEvaluator<F>
where
    F: Fn(&TaskView) -> Result<RewardRecord, String> + Send + Sync,
{
    fn evaluate(&self, task: &TaskView, _cancel: &AtomicBool) -> Result<RewardRecord, String> {
        (self.0)(task)
    }
}

/// Runs an external evaluator, then the deployment probe if configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubprocessEvaluator {
    pub argv: Vec<String>,
    #[serde(default)]
    pub probe: Option<Vec<String>>,
    pub timeout: Duration,
    pub probe_timeout: Duration,
    pub artifact_root: PathBuf,
}

impl SubprocessEvaluator {
    pub fn new(argv: Vec<String>, artifact_root: impl Into<PathBuf>) -> Self {
        SubprocessEvaluator {
            argv,
            probe: None,
            timeout: Duration::from_secs(3600),
            probe_timeout: Duration::from_secs(60),
            artifact_root: artifact_root.into(),
        }
    }

    pub fn input_for(&self, task: &TaskView) -> Result<EvalInput, String> {
        let artifact_dir = self
            .artifact_root
            .join(&task.key.job)
            .join(format!("{}-{}", task.key.seq, task.attempt));
        fs::create_dir_all(&artifact_dir).map_err(|e| format!("cannot create {}: {e}", artifact_dir.display()))?;
        let config = match serde_json::to_value(&task.config.assignments) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => return Err("configuration does not serialize to an object".into()),
        };
        Ok(EvalInput {
            task_id: task.key.to_string(),
            config,
            fidelity: task.fidelity,
            artifact_dir,
        })
    }
}

impl Evaluator for SubprocessEvaluator {
    fn evaluate(&self, task: &TaskView, cancel: &AtomicBool) -> Result<RewardRecord, String> {
        let input = self.input_for(task)?;
        let out = evaluate(&self.argv, &input, self.timeout, Some(cancel)).map_err(|e| e.to_string())?;
        let mut record = RewardRecord::from_metrics(out.metrics);
        record.artifact = out.artifact;
        if let Some(probe) = &self.probe {
            match &record.artifact {
                Some(artifact) => match deploy_probe(probe, artifact, self.probe_timeout) {
                    Ok(m) => record.deploy_metrics = m,
                    Err(e) => record.deploy_error = Some(e.to_string()),
                },
                None => record.deploy_error = Some("evaluator emitted no artifact".into()),
            }
        }
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerConfig {
    pub id: String,
    /// Only take tasks of this job.
    #[serde(default)]
    pub job: Option<String>,
    pub idle_min: Duration,
    pub idle_max: Duration,
    /// Exit after this many tasks.
    #[serde(default)]
    pub max_tasks: Option<usize>,
}

impl WorkerConfig {
    pub fn new(id: impl Into<String>) -> Self {
        WorkerConfig {
            id: id.into(),
            job: None,
            idle_min: Duration::from_millis(20),
            idle_max: Duration::from_secs(1),
            max_tasks: None,
        }
    }
}

/// `stop` ends the loop after the current task; `kill` abandons it
/// without reporting, as if the process died.
#[derive(Debug, Default)]
pub struct WorkerControl {
    pub stop: AtomicBool,
    pub kill: AtomicBool,
}

impl WorkerControl {
    fn halted(&self) -> bool {
        self.stop.load(Ordering::SeqCst) || self.kill.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub reserved: usize,
    pub completed: usize,
    pub failed: usize,
    pub duplicates: usize,
    pub abandoned: usize,
    pub broker_errors: usize,
}

fn nap(total: Duration, control: &WorkerControl, done: Option<&AtomicBool>) {
    let end = Instant::now() + total;
    while Instant::now() < end {
        if control.halted() || done.is_some_and(|d| d.load(Ordering::SeqCst)) {
            return;
        }
        thread::sleep((end - Instant::now()).min(Duration::from_millis(10)));
    }
}

/// Reserve, evaluate with heartbeats, report; idle with exponential
/// backoff while the queue is empty.
pub fn worker_loop(broker: &dyn TaskBroker, evaluator: &dyn Evaluator, config: &WorkerConfig, control: &WorkerControl) -> WorkerStats {
    let mut stats = WorkerStats::default();
    let mut idle = config.idle_min;
    while !control.halted() {
        if config.max_tasks.is_some_and(|m| stats.reserved >= m) {
            break;
        }
        match broker.reserve(&config.id, config.job.as_deref()) {
            Ok(Some(task)) => {
                idle = config.idle_min;
                stats.reserved += 1;
                run_one(broker, evaluator, config, control, &task, &mut stats);
            }
            Ok(None) => {
                nap(idle, control, None);
                idle = (idle * 2).min(config.idle_max);
            }
            Err(_) => {
                stats.broker_errors += 1;
                nap(idle, control, None);
                idle = (idle * 2).min(config.idle_max);
            }
        }
    }
    stats
}

fn run_one(
    broker: &dyn TaskBroker,
    evaluator: &dyn Evaluator,
    config: &WorkerConfig,
    control: &WorkerControl,
    task: &TaskView,
    stats: &mut WorkerStats,
) {
    if !matches!(broker.start(&task.key, &config.id), Ok(true)) {
        stats.abandoned += 1;
        return;
    }
    let done = AtomicBool::new(false);
    let period = Duration::from_secs_f64((task.lease_ttl / 3.0).max(0.001));
    let result = thread::scope(|s| {
        s.spawn(|| loop {
            nap(period, control, Some(&done));
            if control.halted() || done.load(Ordering::SeqCst) {
                return;
            }
            if !matches!(broker.heartbeat(&task.key, &config.id), Ok(true)) {
                return;
            }
        });
        let r = evaluator.evaluate(task, &control.kill);
        done.store(true, Ordering::SeqCst);
        r
    });
    if control.kill.load(Ordering::SeqCst) {
        stats.abandoned += 1;
        return;
    }
    let outcome = match result {
        Ok(record) => TaskOutcome::Completed { record },
        Err(diagnostic) => TaskOutcome::Failed { diagnostic },
    };
    let failed = matches!(outcome, TaskOutcome::Failed { .. });
    match broker.report(&task.key, &config.id, outcome) {
        Ok(ReportAck::Accepted) if failed => stats.failed += 1,
        Ok(ReportAck::Accepted) => stats.completed += 1,
        Ok(_) => stats.duplicates += 1,
        Err(_) => stats.broker_errors += 1,
    }
}
