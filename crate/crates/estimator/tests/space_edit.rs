mod common;


use common::*;
use hopper_core::space::{DiffEntry, Domain, SpaceStore, Value};
use hopper_core::strategy::StrategyConfig;
use hopper_estimator::{Estimator, EstimatorError, JobEvent};

#[test]
fn narrowed_range_applies_to_the_next_batch() {
    let (clock, broker) = sim_broker();
    let _pool = pool(&clock, &broker, 4, wobble);
    let store = SpaceStore::new();
    let v1 = store.insert(plane()).unwrap();
    let (events, observer) = recorder();
    let mut est = Estimator::new(config("j", StrategyConfig::Random, 8, 40, 30.0), v1.clone(), broker.clone())
        .unwrap()
        .with_observer(observer);
    est.run_iteration().unwrap();
    let narrow = DiffEntry::set_domain("x", None, Domain::Float { lo: 0.0, hi: 1.0, log_scale: false });
    let v2 = store.edit("plane", 1, &[narrow], "narrow x").unwrap();

    est.apply_space_edit(&store, "plane", 1).unwrap();
    assert_eq!(est.state().space_version, 1);
    est.apply_space_edit(&store, "plane", v2.version).unwrap();
    assert_eq!(est.state().space_version, 2);
    assert!(events.lock().unwrap().iter().any(|e| matches!(e, JobEvent::SpaceRebound { version: 2, .. })));

    est.run_iteration().unwrap();
    let tasks = broker.tasks_for("j");
    let (old, new) = tasks.split_at(8);
    assert!(old.iter().all(|t| t.config.space_version == 1));
    assert!(old.iter().any(|t| t.config.get("x").and_then(Value::as_f64).unwrap() > 1.0));
    for t in new {
        let x = t.config.get("x").and_then(Value::as_f64).unwrap();
        assert!((0.0..=1.0).contains(&x), "{x}");
        assert_eq!(t.config.space_version, 2);
    }
    // observations from both versions remain
    assert_eq!(est.state().observations().len(), 16);
}

#[test]
fn foreign_and_unrelated_spaces_are_refused() {
    let (_, broker) = sim_broker();
    let store = SpaceStore::new();
    let v1 = store.insert(plane()).unwrap();
    let mut other = plane();
    other.id = "other".into();
    store.insert(other).unwrap();
    let mut est = Estimator::new(config("j", StrategyConfig::Random, 2, 4, 30.0), v1, broker).unwrap();
    assert!(matches!(
        est.apply_space_edit(&store, "other", 1),
        Err(EstimatorError::Lineage { .. })
    ));
    assert!(est.apply_space_edit(&store, "plane", 5).is_err());
}
