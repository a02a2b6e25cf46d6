use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::task::RewardRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("objective metric `{0}` missing from the record")]
    MissingObjective(String),
    #[error("metric `{0}` missing from the record")]
    MissingMetric(String),
    #[error("metric `{0}` is not finite")]
    NonFinite(String),
    #[error("invalid objective: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

/// Upper bound on a metric, e.g. latency. `weight` is the penalty λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub metric: String,
    pub limit: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub metric: String,
    pub weight: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    #[default]
    Penalty,
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub key: String,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub mode: RewardMode,
    /// Terms of the weighted sum; unused in penalty mode.
    #[serde(default)]
    pub terms: Vec<WeightedTerm>,
}

impl ObjectiveSpec {
    pub fn maximize(key: impl Into<String>) -> Self {
        ObjectiveSpec {
            key: key.into(),
            direction: Direction::Maximize,
            constraints: Vec::new(),
            mode: RewardMode::Penalty,
            terms: Vec::new(),
        }
    }

    pub fn minimize(key: impl Into<String>) -> Self {
        ObjectiveSpec {
            direction: Direction::Minimize,
            ..Self::maximize(key)
        }
    }

    pub fn with_constraint(mut self, metric: impl Into<String>, limit: f64, weight: f64) -> Self {
        self.constraints.push(Constraint {
            metric: metric.into(),
            limit,
            weight,
        });
        self
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        for c in &self.constraints {
            if !(c.limit > 0.0 && c.limit.is_finite()) {
                return Err(ObjectiveError::Invalid(format!("limit of `{}` must be positive", c.metric)));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(ObjectiveError::Invalid(format!("weight of `{}` must be non-negative", c.metric)));
            }
        }
        if self.mode == RewardMode::WeightedSum {
            if self.terms.is_empty() {
                return Err(ObjectiveError::Invalid("weighted-sum mode needs at least one term".into()));
            }
            if let Some(t) = self.terms.iter().find(|t| !(t.scale > 0.0 && t.scale.is_finite())) {
                return Err(ObjectiveError::Invalid(format!("scale of `{}` must be positive", t.metric)));
            }
        }
        Ok(())
    }

    /// Maps a scalar reward to the loss strategies minimize.
    pub fn loss(&self, scalar: f64) -> f64 {
        match self.direction {
            Direction::Maximize => -scalar,
            Direction::Minimize => scalar,
        }
    }

    /// Inverse of [`ObjectiveSpec::loss`].
    pub fn scalar(&self, loss: f64) -> f64 {
        self.loss(loss)
    }

    /// True when scalar `a` is better than `b`.
    pub fn better(&self, a: f64, b: f64) -> bool {
        self.loss(a) < self.loss(b)
    }
}

/// Value of a constrained metric. Metrics missing from the record (an
/// unavailable or failed probe) count as violating the limit by 100%.
fn constrained_value(metrics: &BTreeMap<String, f64>, c: &Constraint) -> Result<f64, ObjectiveError> {
    match metrics.get(&c.metric) {
        Some(v) if v.is_finite() => Ok(*v),
        Some(_) => Err(ObjectiveError::NonFinite(c.metric.clone())),
        None => Ok(c.limit * 2.0),
    }
}

/// Scalarizes a record under `spec`.
///
/// Penalty mode: `obj - Σ λ·max(0, (m - limit) / limit)` when maximizing,
/// `obj + Σ ...` when minimizing. Weighted-sum mode: `Σ w·m / scale`.
pub fn combine_reward(record: &RewardRecord, spec: &ObjectiveSpec) -> Result<f64, ObjectiveError> {
    spec.validate()?;
    let metrics = record.all_metrics();
    let obj = *metrics
        .get(&spec.key)
        .ok_or_else(|| ObjectiveError::MissingObjective(spec.key.clone()))?;
    if !obj.is_finite() {
        return Err(ObjectiveError::NonFinite(spec.key.clone()));
    }
    let scalar = match spec.mode {
        RewardMode::Penalty => {
            let mut penalty = 0.0;
            for c in &spec.constraints {
                let m = constrained_value(&metrics, c)?;
                penalty += c.weight * ((m - c.limit) / c.limit).max(0.0);
            }
            match spec.direction {
                Direction::Maximize => obj - penalty,
                Direction::Minimize => obj + penalty,
            }
        }
        RewardMode::WeightedSum => {
            let mut sum = 0.0;
            for t in &spec.terms {
                let m = *metrics
                    .get(&t.metric)
                    .ok_or_else(|| ObjectiveError::MissingMetric(t.metric.clone()))?;
                if !m.is_finite() {
                    return Err(ObjectiveError::NonFinite(t.metric.clone()));
                }
                sum += t.weight * m / t.scale;
            }
            sum
        }
    };
    if scalar.is_finite() {
        Ok(scalar)
    } else {
        Err(ObjectiveError::NonFinite("scalar reward".into()))
    }
}

/// Indices of the records not dominated on (objective, constrained
/// metrics). Constrained metrics are minimized. Records missing a metric
/// are left out; equal records never dominate each other.
pub fn pareto_front(records: &[RewardRecord], spec: &ObjectiveSpec) -> Vec<usize> {
    let points: Vec<Option<Vec<f64>>> = records
        .iter()
        .map(|r| {
            let m = r.all_metrics();
            let mut p = vec![spec.loss(*m.get(&spec.key)?)];
            for c in &spec.constraints {
                p.push(*m.get(&c.metric)?);
            }
            p.iter().all(|v| v.is_finite()).then_some(p)
        })
        .collect();
    let dominates = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y);
    (0..records.len())
        .filter(|&i| {
            let Some(p) = &points[i] else { return false };
            !points.iter().flatten().any(|q| dominates(q, p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pairs: &[(&str, f64)]) -> RewardRecord {
        RewardRecord::from_metrics(pairs.iter().map(|(k, v)| (k.to_string(), *v)))
    }

    #[test]
    fn latency_penalty_example() {
        let spec = ObjectiveSpec::maximize("acc").with_constraint("latency_ms", 40.0, 1.0);
        let mut r = rec(&[("acc", 0.9)]);
        r.deploy_metrics.insert("latency_ms".into(), 50.0);
        let v = combine_reward(&r, &spec).unwrap();
        assert!((v - 0.65).abs() < 1e-12);
        // mirrored for minimization
        let spec = ObjectiveSpec::minimize("err").with_constraint("latency_ms", 40.0, 1.0);
        let mut r = rec(&[("err", 0.1)]);
        r.deploy_metrics.insert("latency_ms".into(), 50.0);
        assert!((combine_reward(&r, &spec).unwrap() - 0.35).abs() < 1e-12);
    }

    #[test]
    fn trivial_cases() {
        let spec = ObjectiveSpec::maximize("acc");
        assert_eq!(combine_reward(&rec(&[("acc", 0.7)]), &spec).unwrap(), 0.7);
        let spec = spec.with_constraint("lat", 40.0, 3.0);
        assert_eq!(combine_reward(&rec(&[("acc", 0.7), ("lat", 40.0)]), &spec).unwrap(), 0.7);
        assert!(matches!(
            combine_reward(&rec(&[("lat", 1.0)]), &spec),
            Err(ObjectiveError::MissingObjective(_))
        ));
    }

    #[test]
    fn missing_deploy_metric_counts_as_double_limit() {
        let spec = ObjectiveSpec::maximize("acc").with_constraint("lat", 40.0, 0.5);
        let mut r = rec(&[("acc", 0.9)]);
        r.deploy_error = Some("probe timed out".into());
        assert!((combine_reward(&r, &spec).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_monotone_beyond_limit() {
        let spec = ObjectiveSpec::maximize("acc").with_constraint("lat", 10.0, 2.0);
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let v = combine_reward(&rec(&[("acc", 1.0), ("lat", 5.0 + i as f64)]), &spec).unwrap();
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn weighted_sum() {
        let mut spec = ObjectiveSpec::maximize("acc");
        spec.mode = RewardMode::WeightedSum;
        assert!(spec.validate().is_err());
        spec.terms = vec![
            WeightedTerm { metric: "acc".into(), weight: 1.0, scale: 1.0 },
            WeightedTerm { metric: "lat".into(), weight: -0.5, scale: 100.0 },
        ];
        let v = combine_reward(&rec(&[("acc", 0.8), ("lat", 20.0)]), &spec).unwrap();
        assert!((v - (0.8 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let spec = ObjectiveSpec::maximize("acc").with_constraint("lat", 0.0, 1.0);
        assert!(spec.validate().is_err());
        let spec = ObjectiveSpec::maximize("acc").with_constraint("lat", 1.0, -1.0);
        assert!(spec.validate().is_err());
    }

    /// Brute-force dominance check written independently of `pareto_front`.
    fn oracle(points: &[(f64, f64)]) -> Vec<usize> {
        let mut out = Vec::new();
        'outer: for (i, &(ai, li)) in points.iter().enumerate() {
            for &(aj, lj) in points {
                let no_worse = aj >= ai && lj <= li;
                let strictly = aj > ai || lj < li;
                if no_worse && strictly {
                    continue 'outer;
                }
            }
            out.push(i);
        }
        out
    }

    #[test]
    fn pareto_matches_oracle() {
        let spec = ObjectiveSpec::maximize("acc").with_constraint("lat", 10.0, 1.0);
        let pts = [(0.9, 20.0), (0.8, 10.0), (0.7, 15.0)];
        let recs: Vec<_> = pts.iter().map(|&(a, l)| rec(&[("acc", a), ("lat", l)])).collect();
        assert_eq!(pareto_front(&recs, &spec), vec![0, 1]);
        assert_eq!(pareto_front(&recs[..1], &spec), vec![0]);
        let dup = vec![recs[0].clone(), recs[0].clone()];
        assert_eq!(pareto_front(&dup, &spec), vec![0, 1]);

        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) % 10) as f64
        };
        for _ in 0..50 {
            let pts: Vec<(f64, f64)> = (0..12).map(|_| (next(), next())).collect();
            let recs: Vec<_> = pts.iter().map(|&(a, l)| rec(&[("acc", a), ("lat", l)])).collect();
            assert_eq!(pareto_front(&recs, &spec), oracle(&pts));
        }
    }
}
