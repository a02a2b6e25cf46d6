mod common;

use std::sync::Arc;

use common::*;
use hopper_core::bo::BoConfig;
use hopper_core::strategy::StrategyConfig;
use hopper_estimator::{CheckpointError, Estimator, EstimatorConfig, EstimatorError, JobStatus, Step};
use hopper_fabric::Broker;

fn proposals(broker: &Broker) -> Vec<(u64, String, f64)> {
    broker
        .tasks_for("a")
        .into_iter()
        .map(|t| (t.key.seq, serde_json::to_string(&t.config.assignments).unwrap(), t.fidelity.resource))
        .collect()
}

fn straight(cfg: &EstimatorConfig) -> (Vec<(u64, String, f64)>, f64) {
    let (clock, broker) = sim_broker();
    let _pool = pool(&clock, &broker, 4, wobble);
    let mut est = Estimator::new(cfg.clone(), Arc::new(plane()), broker.clone()).unwrap();
    assert_eq!(est.run().unwrap(), JobStatus::Complete);
    (proposals(&broker), est.state().best.as_ref().unwrap().loss)
}

/// Drops the controller after every iteration and continues from its
/// sealed checkpoint against the same broker.
fn interrupted(cfg: &EstimatorConfig) -> (Vec<(u64, String, f64)>, f64, usize) {
    let (clock, broker) = sim_broker();
    let _pool = pool(&clock, &broker, 4, wobble);
    let mut snapshot = Estimator::new(cfg.clone(), Arc::new(plane()), broker.clone()).unwrap().checkpoint();
    let mut resumes = 0;
    loop {
        let mut est = Estimator::resume(&snapshot, broker.clone()).unwrap();
        resumes += 1;
        let step = est.run_iteration().unwrap();
        snapshot = est.checkpoint();
        if let Step::Finished(status) = step {
            assert_eq!(status, JobStatus::Complete);
            let best = est.state().best.as_ref().unwrap().loss;
            return (proposals(&broker), best, resumes);
        }
    }
}

#[test]
fn bo_resume_reproduces_the_run() {
    let mut bo = BoConfig::default();
    bo.n_init = 4;
    bo.pool_size = 200;
    let cfg = config("a", StrategyConfig::Bo(bo), 4, 20, 30.0);
    let (a, best_a) = straight(&cfg);
    let (b, best_b, resumes) = interrupted(&cfg);
    assert_eq!(a.len(), 20);
    assert_eq!(a, b);
    assert_eq!(best_a, best_b);
    assert_eq!(resumes, 6);
}

#[test]
fn hyperband_resume_reproduces_promotions() {
    let mut cfg = config("a", StrategyConfig::Hyperband { eta: 3.0 }, 9, 60, 30.0);
    cfg.max_resource = 9.0;
    let (a, best_a) = straight(&cfg);
    let (b, best_b, _) = interrupted(&cfg);
    assert_eq!(a, b);
    assert_eq!(best_a, best_b);
    assert!(a.iter().any(|p| p.2 < 9.0) && a.iter().any(|p| p.2 == 9.0));
}

#[test]
fn corrupt_snapshots_are_refused() {
    let (_, broker) = sim_broker();
    let est = Estimator::new(config("a", StrategyConfig::Random, 2, 4, 30.0), Arc::new(plane()), broker.clone()).unwrap();
    let bytes = est.checkpoint();
    let truncated = &bytes[..bytes.len() / 2];
    assert!(matches!(
        Estimator::resume(truncated, broker.clone()),
        Err(EstimatorError::Checkpoint(CheckpointError::Integrity(_)))
    ));
    let mut doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    let state = doc["state"].as_str().unwrap().replacen("\"iteration\":0", "\"iteration\":7", 1);
    doc["state"] = state.into();
    let tampered = serde_json::to_vec(&doc).unwrap();
    assert!(matches!(
        Estimator::resume(&tampered, broker),
        Err(EstimatorError::Checkpoint(CheckpointError::Integrity(_)))
    ));
}

#[test]
fn resuming_a_finished_job_is_a_no_op() {
    let (clock, broker) = sim_broker();
    let _pool = pool(&clock, &broker, 2, wobble);
    let mut est = Estimator::new(config("a", StrategyConfig::Random, 2, 4, 30.0), Arc::new(plane()), broker.clone()).unwrap();
    est.run().unwrap();
    let mut again = Estimator::resume(&est.checkpoint(), broker.clone()).unwrap();
    assert_eq!(again.run_iteration().unwrap(), Step::Finished(JobStatus::Complete));
    assert_eq!(broker.tasks_for("a").len(), 4);
}

#[test]
fn republishing_after_a_crash_adopts_existing_tasks() {
    let (clock, broker) = sim_broker();
    let _pool = pool(&clock, &broker, 2, wobble);
    let est = Estimator::new(config("a", StrategyConfig::Random, 2, 4, 30.0), Arc::new(plane()), broker.clone()).unwrap();
    let snapshot = est.checkpoint();
    let mut first = Estimator::resume(&snapshot, broker.clone()).unwrap();
    first.run_iteration().unwrap();
    // crash before the checkpoint was written: replay the same iteration
    let mut second = Estimator::resume(&snapshot, broker.clone()).unwrap();
    let Step::Iteration(l) = second.run_iteration().unwrap() else { panic!() };
    assert_eq!(l.completed.len(), 2);
    assert_eq!(broker.tasks_for("a").len(), 2);
}
