use std::collections::BTreeMap;

use hopper_core::strategy::FidelityBudget;
use serde::{Deserialize, Serialize};

/// Running count, mean and population variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
        let mut m = Moments::default();
        xs.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// Completed-task durations bucketed by fidelity resource.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    buckets: BTreeMap<String, Moments>,
}

fn bucket(fidelity: &FidelityBudget) -> String {
    format!("{}", fidelity.resource)
}

impl DurationStats {
    pub fn record(&mut self, fidelity: &FidelityBudget, seconds: f64) {
        if seconds.is_finite() && seconds >= 0.0 {
            self.buckets.entry(bucket(fidelity)).or_default().push(seconds);
        }
    }

    pub fn get(&self, fidelity: &FidelityBudget) -> Moments {
        self.buckets.get(&bucket(fidelity)).copied().unwrap_or_default()
    }

    pub fn buckets(&self) -> &BTreeMap<String, Moments> {
        &self.buckets
    }

    /// All buckets pooled together.
    pub fn overall(&self) -> Moments {
        let mut total = Moments::default();
        for m in self.buckets.values().filter(|m| m.count > 0) {
            let n = total.count + m.count;
            let delta = m.mean - total.mean;
            let mean = total.mean + delta * m.count as f64 / n as f64;
            total.m2 += m.m2 + delta * delta * (total.count * m.count) as f64 / n as f64;
            total.mean = mean;
            total.count = n;
        }
        total
    }
}

/// `clamp(mean + k·sd, t_min, t_max)`, or `t_max` before any task has
/// completed.
pub fn adaptive_timeout(stats: &Moments, k: f64, t_min: f64, t_max: f64) -> f64 {
    if stats.count == 0 {
        return t_max;
    }
    (stats.mean + k * stats.variance().sqrt()).clamp(t_min, t_max.max(t_min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeoutPolicy {
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    pub t_max: f64,
}

fn default_k() -> f64 {
    2.0
}
fn default_t_min() -> f64 {
    1.0
}

impl TimeoutPolicy {
    pub fn new(t_max: f64) -> Self {
        TimeoutPolicy {
            k: default_k(),
            t_min: default_t_min(),
            t_max,
        }
    }

    pub fn timeout(&self, stats: &DurationStats, fidelity: &FidelityBudget) -> f64 {
        adaptive_timeout(&stats.get(fidelity), self.k, self.t_min, self.t_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn timeout_arithmetic() {
        let m = Moments::from_samples([5.0, 7.0, 9.0]);
        let (mean, var) = two_pass(&[5.0, 7.0, 9.0]);
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-12);
        let t = adaptive_timeout(&m, 2.0, 1.0, 100.0);
        assert!((t - (7.0 + 2.0 * (8.0f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((t - 10.266).abs() < 1e-3);
    }

    #[test]
    fn timeout_edges() {
        assert_eq!(adaptive_timeout(&Moments::default(), 2.0, 1.0, 60.0), 60.0);
        let flat = Moments::from_samples([10.0; 4]);
        assert_eq!(adaptive_timeout(&flat, 2.0, 1.0, 60.0), 10.0);
        assert_eq!(adaptive_timeout(&flat, 2.0, 12.0, 60.0), 12.0);
        assert_eq!(adaptive_timeout(&flat, 2.0, 1.0, 8.0), 8.0);
    }

    #[test]
    fn buckets_and_pooling() {
        let mut s = DurationStats::default();
        let lo = FidelityBudget { resource: 1.0, is_final: false };
        let hi = FidelityBudget::full(9.0);
        for x in [1.0, 2.0, 3.0] {
            s.record(&lo, x);
        }
        for x in [10.0, 14.0] {
            s.record(&hi, x);
        }
        assert_eq!(s.get(&lo).count, 3);
        assert_eq!(s.get(&hi).mean, 12.0);
        let all = s.overall();
        let (mean, var) = two_pass(&[1.0, 2.0, 3.0, 10.0, 14.0]);
        assert_eq!(all.count, 5);
        assert!((all.mean - mean).abs() < 1e-12);
        assert!((all.variance() - var).abs() < 1e-9);
    }
}
