//! Simulated workers driven by a [`SimClock`], for deterministic tests of
//! timing behavior.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use hopper_fabric::{Broker, Clock, RewardRecord, SimClock, TaskBroker, TaskOutcome, TaskView};

pub type DurationFn = Arc<dyn Fn(&TaskView) -> f64 + Send + Sync>;
pub type EvalFn = Arc<dyn Fn(&TaskView) -> Result<RewardRecord, String> + Send + Sync>;

/// Idle workers look for work this often (simulated seconds).
pub const POLL_INTERVAL: f64 = 0.05;

pub struct SimPool {
    killed: Vec<Arc<AtomicBool>>,
}

impl SimPool {
    /// Starts `workers` workers at the clock's current time. Each reserves a
    /// task, heartbeats every third of the lease, and reports after
    /// `duration(task)` simulated seconds.
    pub fn spawn(clock: &SimClock, broker: &Arc<Broker>, workers: usize, duration: DurationFn, evaluate: EvalFn) -> Self {
        Self::spawn_at(clock, clock.now(), broker, workers, duration, evaluate)
    }

    /// Like [`SimPool::spawn`], with the workers coming up at `start`.
    pub fn spawn_at(
        clock: &SimClock,
        start: f64,
        broker: &Arc<Broker>,
        workers: usize,
        duration: DurationFn,
        evaluate: EvalFn,
    ) -> Self {
        let killed: Vec<Arc<AtomicBool>> = (0..workers).map(|_| Arc::new(AtomicBool::new(false))).collect();
        for (i, flag) in killed.iter().enumerate() {
            let w = Arc::new(SimWorker {
                id: format!("sim-{i}"),
                broker: broker.clone(),
                duration: duration.clone(),
                evaluate: evaluate.clone(),
                killed: flag.clone(),
            });
            clock.schedule(start, move |c| w.poll(c));
        }
        SimPool { killed }
    }

    /// Kills worker `i` at simulated time `at`; its task is abandoned.
    pub fn kill_at(&self, clock: &SimClock, i: usize, at: f64) {
        let flag = self.killed[i].clone();
        clock.schedule(at, move |_| flag.store(true, Ordering::SeqCst));
    }

    pub fn kill_all(&self) {
        self.killed.iter().for_each(|k| k.store(true, Ordering::SeqCst));
    }
}

struct SimWorker {
    id: String,
    broker: Arc<Broker>,
    duration: DurationFn,
    evaluate: EvalFn,
    killed: Arc<AtomicBool>,
}

impl SimWorker {
    fn dead(&self) -> bool {
        self.killed.load(Ordering::SeqCst)
    }

    fn poll(self: Arc<Self>, clock: &SimClock) {
        if self.dead() {
            return;
        }
        let now = clock.now();
        let Ok(Some(task)) = self.broker.reserve(&self.id, None) else {
            clock.schedule(now + POLL_INTERVAL, move |c| self.poll(c));
            return;
        };
        let _ = self.broker.start(&task.key, &self.id);
        let done = Arc::new(AtomicBool::new(false));
        let finish = now + (self.duration)(&task).max(0.0);
        Self::heartbeat(self.clone(), clock, task.clone(), done.clone(), finish);
        clock.schedule(finish, move |c| {
            done.store(true, Ordering::SeqCst);
            if self.dead() {
                return;
            }
            let outcome = match (self.evaluate)(&task) {
                Ok(record) => TaskOutcome::Completed { record },
                Err(diagnostic) => TaskOutcome::Failed { diagnostic },
            };
            let _ = self.broker.report(&task.key, &self.id, outcome);
            let now = c.now();
            c.schedule(now, move |c| self.poll(c));
        });
    }

    fn heartbeat(w: Arc<Self>, clock: &SimClock, task: TaskView, done: Arc<AtomicBool>, finish: f64) {
        let at = clock.now() + task.lease_ttl / 3.0;
        if at >= finish {
            return;
        }
        clock.schedule(at, move |c| {
            if done.load(Ordering::SeqCst) || w.dead() {
                return;
            }
            if matches!(w.broker.heartbeat(&task.key, &w.id), Ok(true)) {
                Self::heartbeat(w, c, task, done, finish);
            }
        });
    }
}
