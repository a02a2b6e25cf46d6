use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::task::{Lease, RewardRecord, Task, TaskKey, TaskOutcome, TaskState, TaskView};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BrokerError {
    #[error("unknown task {0}")]
    UnknownTask(TaskKey),
    #[error("task {0} already exists")]
    DuplicateTask(TaskKey),
    #[error("broker unreachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerConfig {
    /// Lease time-to-live in seconds; workers heartbeat at a third of it.
    pub lease_ttl: f64,
    pub max_attempts: u32,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            lease_ttl: 30.0,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportAck {
    Accepted,
    /// The task was already resolved; the report was ignored.
    Duplicate,
    /// A failure from a worker that no longer holds the lease; ignored.
    Stale,
}

/// Every state change, in the order it was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BrokerEvent {
    Published { task: Box<Task> },
    Reserved { key: TaskKey, worker: String, attempt: u32, at: f64 },
    Started { key: TaskKey, worker: String, at: f64 },
    Requeued { key: TaskKey, attempts: u32, at: f64 },
    Completed { key: TaskKey, worker: String, record: RewardRecord, late: bool, at: f64 },
    Failed { key: TaskKey, worker: Option<String>, diagnostic: String, at: f64 },
    DuplicateIgnored { key: TaskKey, worker: String, at: f64 },
}

impl BrokerEvent {
    pub fn key(&self) -> &TaskKey {
        match self {
            BrokerEvent::Published { task } => &task.key,
            BrokerEvent::Reserved { key, .. }
            | BrokerEvent::Started { key, .. }
            | BrokerEvent::Requeued { key, .. }
            | BrokerEvent::Completed { key, .. }
            | BrokerEvent::Failed { key, .. }
            | BrokerEvent::DuplicateIgnored { key, .. } => key,
        }
    }
}

/// The worker-facing half of the broker, implemented in-process and over
/// HTTP.
pub trait TaskBroker: Send + Sync {
    /// Atomically leases the oldest pending task. A `job` filter matches
    /// that job and its auxiliary queues (`job~name`).
    fn reserve(&self, worker: &str, job: Option<&str>) -> Result<Option<TaskView>, BrokerError>;
    /// Marks a reserved task as running. False if the lease is gone.
    fn start(&self, key: &TaskKey, worker: &str) -> Result<bool, BrokerError>;
    /// Extends the lease. False if the worker no longer holds it.
    fn heartbeat(&self, key: &TaskKey, worker: &str) -> Result<bool, BrokerError>;
    fn report(&self, key: &TaskKey, worker: &str, outcome: TaskOutcome) -> Result<ReportAck, BrokerError>;
}

type Listener = Arc<dyn Fn(&BrokerEvent) + Send + Sync>;

#[derive(Default)]
struct Inner {
    tasks: HashMap<TaskKey, Task>,
    queue: VecDeque<TaskKey>,
}

fn job_matches(job: &str, filter: &str) -> bool {
    job.strip_prefix(filter).is_some_and(|rest| rest.is_empty() || rest.starts_with('~'))
}

/// Read access to the task table while a waiter's predicate runs.
pub struct TaskTable<'a> {
    inner: &'a Inner,
    pub now: f64,
}

impl TaskTable<'_> {
    pub fn get(&self, key: &TaskKey) -> Option<&Task> {
        self.inner.tasks.get(key)
    }
}

/// In-process broker. All operations take one lock, so reservation is
/// linearizable; expired leases are swept before every operation.
pub struct Broker {
    inner: Mutex<Inner>,
    changed: Condvar,
    clock: Arc<dyn Clock>,
    config: BrokerConfig,
    listener: RwLock<Option<Listener>>,
}

impl Broker {
    pub fn new(clock: Arc<dyn Clock>, config: BrokerConfig) -> Self {
        Broker {
            inner: Mutex::new(Inner::default()),
            changed: Condvar::new(),
            clock,
            config,
            listener: RwLock::new(None),
        }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Called with every event while the broker lock is held.
    pub fn set_listener(&self, f: impl Fn(&BrokerEvent) + Send + Sync + 'static) {
        *self.listener.write().expect("listener lock poisoned") = Some(Arc::new(f));
    }

    fn emit(&self, event: BrokerEvent) {
        if let Some(l) = self.listener.read().expect("listener lock poisoned").as_ref() {
            l(&event);
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        let mut inner = self.inner.lock().expect("broker poisoned");
        self.sweep_locked(&mut inner);
        inner
    }

    /// Reinstates tasks recovered from persistence. Live leases restart
    /// their time-to-live on this broker's clock.
    pub fn restore(&self, tasks: impl IntoIterator<Item = Task>) {
        let mut inner = self.inner.lock().expect("broker poisoned");
        let now = self.clock.now();
        let mut pending: Vec<(f64, TaskKey)> = Vec::new();
        for mut task in tasks {
            if let Some(lease) = task.lease.as_mut() {
                lease.expires_at = now + self.config.lease_ttl;
            }
            if task.state == TaskState::Pending {
                pending.push((task.enqueued_at, task.key.clone()));
            }
            inner.tasks.insert(task.key.clone(), task);
        }
        pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        inner.queue.extend(pending.into_iter().map(|(_, k)| k));
    }

    pub fn publish(&self, mut task: Task) -> Result<(), BrokerError> {
        let mut inner = self.lock();
        if inner.tasks.contains_key(&task.key) {
            return Err(BrokerError::DuplicateTask(task.key));
        }
        task.state = TaskState::Pending;
        task.attempts = 1;
        task.lease = None;
        task.enqueued_at = self.clock.now();
        inner.queue.push_back(task.key.clone());
        self.emit(BrokerEvent::Published {
            task: Box::new(task.clone()),
        });
        inner.tasks.insert(task.key.clone(), task);
        drop(inner);
        self.changed.notify_all();
        Ok(())
    }

    /// Requeues (or fails, past `max_attempts`) tasks whose lease expired.
    pub fn sweep(&self) {
        drop(self.lock());
    }

    fn sweep_locked(&self, inner: &mut Inner) {
        let now = self.clock.now();
        let mut expired: Vec<TaskKey> = inner
            .tasks
            .values()
            .filter(|t| matches!(t.state, TaskState::Reserved | TaskState::Running))
            .filter(|t| t.lease.as_ref().is_some_and(|l| l.expires_at <= now))
            .map(|t| t.key.clone())
            .collect();
        if expired.is_empty() {
            return;
        }
        expired.sort();
        for key in expired {
            let task = inner.tasks.get_mut(&key).expect("listed above");
            let worker = task.lease.take().map(|l| l.worker);
            if task.attempts >= self.config.max_attempts {
                task.state = TaskState::Failed;
                task.finished_at = Some(now);
                let diagnostic = format!("lease expired on attempt {} of {}", task.attempts, self.config.max_attempts);
                task.outcome = Some(TaskOutcome::Failed {
                    diagnostic: diagnostic.clone(),
                });
                self.emit(BrokerEvent::Failed {
                    key,
                    worker,
                    diagnostic,
                    at: now,
                });
            } else {
                task.state = TaskState::Pending;
                task.attempts += 1;
                task.started_at = None;
                self.emit(BrokerEvent::Requeued {
                    key: key.clone(),
                    attempts: task.attempts,
                    at: now,
                });
                inner.queue.push_front(key);
            }
        }
        self.changed.notify_all();
    }

    pub fn get(&self, key: &TaskKey) -> Option<Task> {
        self.lock().tasks.get(key).cloned()
    }

    /// Tasks of a job ordered by sequence number.
    pub fn tasks_for(&self, job: &str) -> Vec<Task> {
        let inner = self.lock();
        let mut v: Vec<Task> = inner.tasks.values().filter(|t| t.key.job == job).cloned().collect();
        v.sort_by_key(|t| t.key.seq);
        v
    }

    pub fn pending_count(&self) -> usize {
        self.lock().queue.len()
    }

    /// Blocks until `done` holds, `limit` passes, or `stop` is raised.
    /// A simulated clock is stepped instead of sleeping; with an unbounded
    /// `limit` and an empty event queue it gives up. Returns whether `done`
    /// held.
    pub fn wait_until(&self, limit: f64, stop: Option<&AtomicBool>, mut done: impl FnMut(&TaskTable<'_>) -> bool) -> bool {
        loop {
            let inner = self.lock();
            let now = self.clock.now();
            if done(&TaskTable { inner: &inner, now }) {
                return true;
            }
            if now >= limit || stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
                return false;
            }
            match self.clock.simulated() {
                Some(sim) => {
                    drop(inner);
                    if !sim.step(limit) && !limit.is_finite() {
                        // nothing scheduled will ever change the table
                        return false;
                    }
                }
                None => {
                    let wait = (limit - now).clamp(0.0, 0.2);
                    let _unused = self
                        .changed
                        .wait_timeout(inner, Duration::from_secs_f64(wait))
                        .expect("broker poisoned");
                }
            }
        }
    }

    fn holds(task: &Task, worker: &str) -> bool {
        matches!(task.state, TaskState::Reserved | TaskState::Running)
            && task.lease.as_ref().is_some_and(|l| l.worker == worker)
    }
}

impl TaskBroker for Broker {
    fn reserve(&self, worker: &str, job: Option<&str>) -> Result<Option<TaskView>, BrokerError> {
        let mut inner = self.lock();
        let pos = inner.queue.iter().position(|k| job.is_none_or(|j| job_matches(&k.job, j)));
        let Some(pos) = pos else { return Ok(None) };
        let key = inner.queue.remove(pos).expect("position is in range");
        let now = self.clock.now();
        let task = inner.tasks.get_mut(&key).expect("queued tasks exist");
        task.state = TaskState::Reserved;
        task.started_at = Some(now);
        task.lease = Some(Lease {
            worker: worker.to_string(),
            expires_at: now + self.config.lease_ttl,
        });
        let view = TaskView {
            key: key.clone(),
            config: task.config.clone(),
            fidelity: task.fidelity,
            attempt: task.attempts,
            lease_ttl: self.config.lease_ttl,
        };
        self.emit(BrokerEvent::Reserved {
            key,
            worker: worker.to_string(),
            attempt: task.attempts,
            at: now,
        });
        Ok(Some(view))
    }

    fn start(&self, key: &TaskKey, worker: &str) -> Result<bool, BrokerError> {
        let mut inner = self.lock();
        let task = inner.tasks.get_mut(key).ok_or_else(|| BrokerError::UnknownTask(key.clone()))?;
        if !Self::holds(task, worker) {
            return Ok(false);
        }
        if task.state == TaskState::Reserved {
            task.state = TaskState::Running;
            self.emit(BrokerEvent::Started {
                key: key.clone(),
                worker: worker.to_string(),
                at: self.clock.now(),
            });
        }
        Ok(true)
    }

    fn heartbeat(&self, key: &TaskKey, worker: &str) -> Result<bool, BrokerError> {
        let mut inner = self.lock();
        let ttl = self.config.lease_ttl;
        let now = self.clock.now();
        let task = inner.tasks.get_mut(key).ok_or_else(|| BrokerError::UnknownTask(key.clone()))?;
        if !Self::holds(task, worker) {
            return Ok(false);
        }
        if let Some(lease) = task.lease.as_mut() {
            lease.expires_at = now + ttl;
        }
        Ok(true)
    }

    fn report(&self, key: &TaskKey, worker: &str, outcome: TaskOutcome) -> Result<ReportAck, BrokerError> {
        let mut inner = self.lock();
        let now = self.clock.now();
        let task = inner.tasks.get_mut(key).ok_or_else(|| BrokerError::UnknownTask(key.clone()))?;
        if task.state.is_resolved() {
            self.emit(BrokerEvent::DuplicateIgnored {
                key: key.clone(),
                worker: worker.to_string(),
                at: now,
            });
            return Ok(ReportAck::Duplicate);
        }
        let holder = Self::holds(task, worker);
        let event = match outcome {
            TaskOutcome::Completed { record } => {
                task.state = TaskState::Completed;
                task.outcome = Some(TaskOutcome::Completed { record: record.clone() });
                BrokerEvent::Completed {
                    key: key.clone(),
                    worker: worker.to_string(),
                    record,
                    late: !holder,
                    at: now,
                }
            }
            TaskOutcome::Failed { .. } if !holder => return Ok(ReportAck::Stale),
            TaskOutcome::Failed { diagnostic } => {
                task.state = TaskState::Failed;
                task.outcome = Some(TaskOutcome::Failed {
                    diagnostic: diagnostic.clone(),
                });
                BrokerEvent::Failed {
                    key: key.clone(),
                    worker: Some(worker.to_string()),
                    diagnostic,
                    at: now,
                }
            }
        };
        task.lease = None;
        task.finished_at = Some(now);
        if !holder {
            // a late result for a requeued task: its attempt's start is unknown
            task.started_at = task.started_at.or(Some(task.enqueued_at));
        }
        inner.queue.retain(|k| k != key);
        self.emit(event);
        drop(inner);
        self.changed.notify_all();
        Ok(ReportAck::Accepted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use hopper_core::space::Configuration;
    use hopper_core::strategy::FidelityBudget;
    use std::collections::HashSet;
    use std::thread;

    fn task(seq: u64) -> Task {
        let config = Configuration {
            assignments: Default::default(),
            space_version: 1,
        };
        Task::new(TaskKey::new("j", seq), 0, config, FidelityBudget::full(1.0))
    }

    fn done(v: f64) -> TaskOutcome {
        TaskOutcome::Completed {
            record: RewardRecord::from_metrics([("score".to_string(), v)]),
        }
    }

    fn sim_broker(ttl: f64) -> (Arc<SimClock>, Broker) {
        let clock = Arc::new(SimClock::new());
        let broker = Broker::new(clock.clone(), BrokerConfig {
            lease_ttl: ttl,
            max_attempts: 3,
        });
        (clock, broker)
    }

    #[test]
    fn concurrent_reservations_are_exclusive() {
        for _ in 0..20 {
            let broker = Arc::new(Broker::new(Arc::new(crate::clock::RealClock::new()), BrokerConfig::default()));
            for i in 0..8 {
                broker.publish(task(i)).unwrap();
            }
            let handles: Vec<_> = (0..8)
                .map(|w| {
                    let b = broker.clone();
                    thread::spawn(move || {
                        let mut got = Vec::new();
                        while let Some(t) = b.reserve(&format!("w{w}"), None).unwrap() {
                            got.push(t.key.seq);
                        }
                        got
                    })
                })
                .collect();
            let all: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
            let unique: HashSet<u64> = all.iter().copied().collect();
            assert_eq!(all.len(), 8);
            assert_eq!(unique.len(), 8);
        }
    }

    #[test]
    fn expired_lease_requeues_then_fails() {
        let (clock, broker) = sim_broker(1.0);
        broker.publish(task(0)).unwrap();
        let t = broker.reserve("a", None).unwrap().unwrap();
        assert_eq!(t.attempt, 1);
        clock.step(1.5);
        let again = broker.reserve("b", None).unwrap().unwrap();
        assert_eq!(again.attempt, 2);
        assert_eq!(broker.get(&again.key).unwrap().attempts, 2);
        clock.step(3.0);
        broker.reserve("c", None).unwrap().unwrap();
        clock.step(4.5);
        let t = broker.get(&again.key).unwrap();
        assert_eq!(t.state, TaskState::Failed);
        assert!(broker.reserve("d", None).unwrap().is_none());
    }

    #[test]
    fn heartbeat_keeps_the_lease() {
        let (clock, broker) = sim_broker(1.0);
        broker.publish(task(0)).unwrap();
        let t = broker.reserve("a", None).unwrap().unwrap();
        assert!(broker.start(&t.key, "a").unwrap());
        for i in 1..10 {
            clock.step(i as f64 * 0.5);
            assert!(broker.heartbeat(&t.key, "a").unwrap());
        }
        assert_eq!(broker.get(&t.key).unwrap().state, TaskState::Running);
        assert!(!broker.heartbeat(&t.key, "b").unwrap());
    }

    #[test]
    fn late_report_wins_and_rerun_is_duplicate() {
        let (clock, broker) = sim_broker(1.0);
        let events = Arc::new(Mutex::new(Vec::new()));
        let sink = events.clone();
        broker.set_listener(move |e| sink.lock().unwrap().push(e.clone()));
        broker.publish(task(0)).unwrap();
        let key = broker.reserve("slow", None).unwrap().unwrap().key;
        clock.step(2.0);
        broker.reserve("fast", None).unwrap().unwrap();
        assert_eq!(broker.report(&key, "slow", done(0.1)).unwrap(), ReportAck::Accepted);
        assert_eq!(broker.report(&key, "fast", done(0.2)).unwrap(), ReportAck::Duplicate);
        assert!(!broker.heartbeat(&key, "fast").unwrap());
        let t = broker.get(&key).unwrap();
        assert_eq!(t.record().unwrap().train_metrics["score"], 0.1);
        let log = events.lock().unwrap();
        assert!(matches!(log.last(), Some(BrokerEvent::DuplicateIgnored { .. })));
        assert!(log.iter().any(|e| matches!(e, BrokerEvent::Completed { late: true, .. })));
    }

    #[test]
    fn stale_failure_is_ignored_and_unknown_is_an_error() {
        let (clock, broker) = sim_broker(1.0);
        broker.publish(task(0)).unwrap();
        let key = broker.reserve("a", None).unwrap().unwrap().key;
        clock.step(2.0);
        let fail = TaskOutcome::Failed {
            diagnostic: "boom".into(),
        };
        assert_eq!(broker.report(&key, "a", fail).unwrap(), ReportAck::Stale);
        assert_eq!(broker.get(&key).unwrap().state, TaskState::Pending);
        assert!(matches!(
            broker.report(&TaskKey::new("j", 9), "a", done(1.0)),
            Err(BrokerError::UnknownTask(_))
        ));
        assert!(broker.publish(task(0)).is_err());
    }

    #[test]
    fn job_filter_and_restore() {
        let (_, broker) = sim_broker(5.0);
        let mut other = task(0);
        other.key.job = "k".into();
        broker.publish(task(0)).unwrap();
        broker.publish(other).unwrap();
        let t = broker.reserve("w", Some("k")).unwrap().unwrap();
        assert_eq!(t.key.job, "k");
        let mut aux = task(1);
        aux.key.job = "k~smoke".into();
        broker.publish(aux).unwrap();
        assert!(broker.reserve("w", Some("")).unwrap().is_none());
        assert_eq!(broker.reserve("w", Some("k")).unwrap().unwrap().key.job, "k~smoke");
        let (_, copy) = sim_broker(5.0);
        copy.restore(broker.tasks_for("j").into_iter().chain(broker.tasks_for("k")));
        assert_eq!(copy.pending_count(), 1);
        assert_eq!(copy.get(&t.key).unwrap().state, TaskState::Reserved);
    }
}
