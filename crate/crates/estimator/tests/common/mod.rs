#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use hopper_core::space::{Domain, ParamNode, SearchSpace, Value};
use hopper_core::strategy::StrategyConfig;
use hopper_estimator::sim::SimPool;
use hopper_estimator::{EstimatorConfig, JobEvent, TimeoutPolicy};
use hopper_fabric::{Broker, BrokerConfig, ObjectiveSpec, RewardRecord, SimClock, TaskView};

pub fn plane() -> SearchSpace {
    SearchSpace::new(
        "plane",
        vec![
            ParamNode::new("x", Domain::Float { lo: -5.0, hi: 5.0, log_scale: false }),
            ParamNode::new("y", Domain::Float { lo: -5.0, hi: 5.0, log_scale: false }),
        ],
    )
    .unwrap()
}

pub fn bowl(t: &TaskView) -> f64 {
    let x = t.config.get("x").and_then(Value::as_f64).unwrap();
    let y = t.config.get("y").and_then(Value::as_f64).unwrap();
    (x - 1.0).powi(2) + (y + 2.0).powi(2)
}

pub fn bowl_record(t: &TaskView) -> Result<RewardRecord, String> {
    Ok(RewardRecord::from_metrics([("loss".to_string(), bowl(t))]))
}

pub fn config(job: &str, strategy: StrategyConfig, batch: usize, max: usize, t_max: f64) -> EstimatorConfig {
    EstimatorConfig {
        job_id: job.into(),
        strategy,
        objective: ObjectiveSpec::minimize("loss"),
        batch_size: batch,
        max_evaluations: max,
        max_resource: 1.0,
        timeout: TimeoutPolicy {
            k: 2.0,
            t_min: 0.5,
            t_max,
        },
        seed: 11,
    }
}

pub fn sim_broker() -> (Arc<SimClock>, Arc<Broker>) {
    let clock = Arc::new(SimClock::new());
    let broker = Arc::new(Broker::new(clock.clone(), BrokerConfig::default()));
    (clock, broker)
}

/// Durations around one second with a deterministic wobble.
pub fn wobble(t: &TaskView) -> f64 {
    0.9 + 0.1 * (t.key.seq % 3) as f64
}

pub fn pool(clock: &SimClock, broker: &Arc<Broker>, n: usize, duration: fn(&TaskView) -> f64) -> SimPool {
    SimPool::spawn(clock, broker, n, Arc::new(duration), Arc::new(bowl_record))
}

pub fn recorder() -> (Arc<Mutex<Vec<JobEvent>>>, Arc<dyn hopper_estimator::JobObserver>) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = log.clone();
    let observer = move |e: &JobEvent| sink.lock().unwrap().push(e.clone());
    (log, Arc::new(observer))
}
