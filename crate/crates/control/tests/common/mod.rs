#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use hopper_control::service::{Service, ServiceConfig};
use hopper_control::spec::JobSpec;
use hopper_fabric::{worker_loop, FnEvaluator, RewardRecord, TaskView, WorkerConfig, WorkerControl, WorkerStats};

pub const PLANE: &str = r#"
space:
  x: {type: float, range: [-5...5]}
  y: {type: float, range: [-5...5]}
objective: {key: loss, direction: minimize}
evaluator: unused
"#;

pub fn spec(name: &str, extra: &str) -> JobSpec {
    JobSpec::parse(&format!("name: {name}\n{PLANE}\n{extra}")).unwrap()
}

pub fn config(dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(dir);
    c.local_workers = false;
    c.broker.lease_ttl = 1.0;
    c
}

pub fn bowl(task: &TaskView) -> Result<RewardRecord, String> {
    let v = |k: &str| task.config.assignments[k].as_f64().unwrap();
    let loss = (v("x") - 1.0).powi(2) + (v("y") + 2.0).powi(2);
    Ok(RewardRecord::from_metrics([("loss".to_string(), loss)]))
}

pub struct Pool {
    pub controls: Vec<Arc<WorkerControl>>,
    handles: Vec<JoinHandle<WorkerStats>>,
}

impl Pool {
    pub fn spawn(
        service: &Service,
        n: usize,
        eval: impl Fn(&TaskView) -> Result<RewardRecord, String> + Send + Sync + Clone + 'static,
    ) -> Pool {
        let mut controls = Vec::new();
        let mut handles = Vec::new();
        for i in 0..n {
            let control = Arc::new(WorkerControl::default());
            controls.push(control.clone());
            let broker = service.broker().clone();
            let eval = FnEvaluator(eval.clone());
            let mut cfg = WorkerConfig::new(format!("w{i}"));
            cfg.idle_max = Duration::from_millis(20);
            handles.push(thread::spawn(move || worker_loop(&*broker, &eval, &cfg, &control)));
        }
        Pool { controls, handles }
    }

    pub fn kill(self) -> Vec<WorkerStats> {
        for c in &self.controls {
            c.kill.store(true, std::sync::atomic::Ordering::SeqCst);
        }
        self.handles.into_iter().map(|h| h.join().unwrap()).collect()
    }

    pub fn stop(self) -> Vec<WorkerStats> {
        for c in &self.controls {
            c.stop.store(true, std::sync::atomic::Ordering::SeqCst);
        }
        self.handles.into_iter().map(|h| h.join().unwrap()).collect()
    }
}

pub fn wait_for(what: &str, timeout: Duration, mut cond: impl FnMut() -> bool) {
    let end = Instant::now() + timeout;
    while !cond() {
        assert!(Instant::now() < end, "timed out waiting for {what}");
        thread::sleep(Duration::from_millis(10));
    }
}
