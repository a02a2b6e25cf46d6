//! Fills unset strategy and batch fields of a job from simple rules and
//! the knowledge base of finished jobs.

use hopper_core::bo::{BoConfig, SurrogateKind};
use hopper_core::space::{Domain, SearchSpace};
use hopper_core::strategy::StrategyConfig;
use hopper_fabric::{Direction, ObjectiveSpec};
use serde::{Deserialize, Serialize};

use crate::spec::JobSpec;

/// Spaces with at most this many configurations count as enumerable.
pub const ENUMERABLE_LIMIT: f64 = 500.0;
pub const GP_MAX_DIMS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// `None` when the space has a float dimension.
    pub space_size: Option<f64>,
    pub dims: usize,
    pub continuous: usize,
    pub objective: String,
}

impl Fingerprint {
    pub fn of(space: &SearchSpace, objective: &ObjectiveSpec) -> Self {
        let slots = space.layout().slots();
        let dir = match objective.direction {
            Direction::Maximize => "max",
            Direction::Minimize => "min",
        };
        Fingerprint {
            space_size: space.size(),
            dims: slots.len(),
            continuous: slots.iter().filter(|s| matches!(s.domain, Domain::Float { .. })).count(),
            objective: format!("{dir}:{}", objective.key),
        }
    }

    fn distance(&self, other: &Fingerprint) -> f64 {
        let log_size = |f: &Fingerprint| f.space_size.map_or(12.0, |s| s.max(1.0).log10());
        (log_size(self) - log_size(other)).abs()
            + self.dims.abs_diff(other.dims) as f64
            + self.continuous.abs_diff(other.continuous) as f64
            + if self.objective == other.objective { 0.0 } else { 10.0 }
    }
}

/// One finished job, as remembered for later formatting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub job: String,
    pub fingerprint: Fingerprint,
    pub strategy: String,
    pub best: Option<f64>,
    pub evaluations: usize,
    pub mean_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormattedJob {
    pub spec: JobSpec,
    /// Expected seconds per task from the nearest past job, if any.
    pub estimated_duration: Option<f64>,
    pub rationale: Vec<String>,
}

fn choose_strategy(spec: &JobSpec, fp: &Fingerprint) -> (StrategyConfig, String) {
    if fp.space_size.is_some_and(|s| s <= ENUMERABLE_LIMIT) {
        let cfg = BoConfig::with_surrogate(SurrogateKind::Forest);
        return (StrategyConfig::Bo(cfg), format!("enumerable space of {} configurations: bo-forest", fp.space_size.unwrap_or(0.0)));
    }
    if fp.continuous >= 1 && fp.dims <= GP_MAX_DIMS {
        let cfg = BoConfig::with_surrogate(SurrogateKind::Gp);
        return (StrategyConfig::Bo(cfg), format!("{} continuous of {} dimensions: bo-gp", fp.continuous, fp.dims));
    }
    if spec.fidelity_capable() {
        return (StrategyConfig::Hyperband { eta: 3.0 }, "evaluator honors fidelity: hyperband".into());
    }
    (
        StrategyConfig::Evolution { population: 20, sample: 5 },
        "large discrete or high-dimensional space: evolution".into(),
    )
}

/// Pure function of the partial spec, its resolved space and the
/// knowledge snapshot.
pub fn format_job(partial: &JobSpec, space: &SearchSpace, knowledge: &[KnowledgeRecord]) -> FormattedJob {
    let mut spec = partial.clone();
    let mut rationale = Vec::new();
    let fp = Fingerprint::of(space, &spec.objective);
    match &spec.strategy {
        Some(s) => rationale.push(format!("strategy {} pinned by the user", s.name())),
        None => {
            let (s, why) = choose_strategy(&spec, &fp);
            rationale.push(why);
            spec.strategy = Some(s);
        }
    }
    if spec.batch_size.is_none() {
        let batch = spec.parallelism.min(spec.max_evaluations);
        rationale.push(format!("batch size {batch} from parallelism"));
        spec.batch_size = Some(batch);
    }
    let nearest = knowledge
        .iter()
        .filter(|k| k.mean_duration.is_some())
        .min_by(|a, b| fp.distance(&a.fingerprint).total_cmp(&fp.distance(&b.fingerprint)));
    let estimated_duration = nearest.and_then(|k| k.mean_duration);
    match nearest {
        Some(k) => rationale.push(format!("task duration estimated from job {}", k.job)),
        None => rationale.push("task duration unknown".into()),
    }
    FormattedJob {
        spec,
        estimated_duration,
        rationale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hopper_core::space::parse_space;

    fn spec(extra: &str) -> JobSpec {
        JobSpec::parse(&format!(
            "name: t\nspace: s\nobjective: {{key: acc}}\nmax_evaluations: 20\nparallelism: 3\nevaluator: run\n{extra}"
        ))
        .unwrap()
    }

    fn strategy_for(space: &str, extra: &str) -> String {
        let space = parse_space(space).unwrap();
        format_job(&spec(extra), &space, &[]).spec.strategy.unwrap().name()
    }

    #[test]
    fn rule_table() {
        let floats = "a: {type: float, range: [0...1]}\nb: {type: float, range: [0...1]}\nc: {type: float, range: [0...1]}";
        assert_eq!(strategy_for(floats, ""), "bo-gp");
        let small = "a: {type: int, range: [1...10]}\nb: {type: choice, range: {x, y}}";
        assert_eq!(strategy_for(small, ""), "bo-forest");
        let big: String = (0..6).map(|i| format!("p{i}: {{type: int, range: [1...100]}}\n")).collect();
        assert_eq!(strategy_for(&big, ""), "evolution");
        assert_eq!(strategy_for(&big, "max_resource: 27"), "hyperband");
        let wide: String = (0..25).map(|i| format!("p{i}: {{type: float, range: [0...1]}}\n")).collect();
        assert_eq!(strategy_for(&wide, ""), "evolution");
    }

    #[test]
    fn pinned_strategy_and_batch_are_untouched() {
        let space = parse_space("a: {type: float, range: [0...1]}").unwrap();
        let partial = spec("strategy: {kind: random}\nbatch_size: 5");
        let out = format_job(&partial, &space, &[]);
        assert_eq!(out.spec, partial);
        assert_eq!(out.estimated_duration, None);
        assert!(out.rationale.iter().any(|r| r == "task duration unknown"));
        let filled = format_job(&spec(""), &space, &[]);
        assert_eq!(filled.spec.batch_size, Some(3));
    }

    #[test]
    fn nearest_fingerprint_supplies_duration() {
        let space = parse_space("a: {type: float, range: [0...1]}").unwrap();
        let obj = ObjectiveSpec::maximize("acc");
        let near = KnowledgeRecord {
            job: "near".into(),
            fingerprint: Fingerprint::of(&space, &obj),
            strategy: "bo-gp".into(),
            best: Some(0.9),
            evaluations: 10,
            mean_duration: Some(4.0),
        };
        let mut far = near.clone();
        far.job = "far".into();
        far.fingerprint.dims = 40;
        far.mean_duration = Some(100.0);
        let out = format_job(&spec(""), &space, &[far.clone(), near.clone()]);
        assert_eq!(out.estimated_duration, Some(4.0));
        // pure: same inputs, same output
        assert_eq!(out, format_job(&spec(""), &space, &[far, near]));
    }
}
