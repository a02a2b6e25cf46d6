use std::fmt;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, Result, SearchSpace, SpaceError};

/// Inactive dimensions encode to this sentinel.
pub const INACTIVE: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Choice(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Choice(v) => f.write_str(v),
        }
    }
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Choice(_) => None,
        }
    }
}

/// A structure-respecting assignment of the active parameters of a space,
/// keyed by instance path in layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub assignments: IndexMap<String, Value>,
    pub space_version: u64,
}

impl Configuration {
    pub fn get(&self, path: &str) -> Option<&Value> {
        self.assignments.get(path)
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

fn sample_domain(domain: &Domain, rng: &mut impl Rng) -> Value {
    match domain {
        Domain::Int { lo, hi } => Value::Int(rng.gen_range(*lo..=*hi)),
        Domain::Float { lo, hi, log_scale } => {
            if lo == hi {
                Value::Float(*lo)
            } else if *log_scale {
                Value::Float(rng.gen_range(lo.ln()..hi.ln()).exp().clamp(*lo, *hi))
            } else {
                Value::Float(rng.gen_range(*lo..*hi))
            }
        }
        Domain::Choice { values } => Value::Choice(values.choose(rng).expect("non-empty").clone()),
    }
}

/// Draws a value different from `current`, or `None` when the domain has
/// only one value.
fn resample_other(domain: &Domain, current: &Value, rng: &mut impl Rng) -> Option<Value> {
    match domain {
        Domain::Int { lo, hi } if hi > lo => {
            let Value::Int(cur) = current else { return Some(sample_domain(domain, rng)) };
            let mut v = rng.gen_range(*lo..*hi);
            if v >= *cur {
                v += 1;
            }
            Some(Value::Int(v))
        }
        Domain::Float { lo, hi, .. } if hi > lo => loop {
            let v = sample_domain(domain, rng);
            if &v != current {
                return Some(v);
            }
        },
        Domain::Choice { values } if values.len() > 1 => {
            let others: Vec<_> = values
                .iter()
                .filter(|v| !matches!(current, Value::Choice(c) if c == *v))
                .collect();
            Some(Value::Choice((*others.choose(rng)?).clone()))
        }
        _ => None,
    }
}

impl SearchSpace {
    pub fn sample(&self, seed: u64) -> Configuration {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample_with(&self, rng: &mut impl Rng) -> Configuration {
        let values = self
            .layout()
            .walk::<std::convert::Infallible>(|_, slot| Ok(sample_domain(&slot.domain, rng)))
            .unwrap_or_else(|e| match e {});
        self.collect(values)
    }

    fn collect(&self, values: Vec<Option<Value>>) -> Configuration {
        let assignments = self
            .layout()
            .slots()
            .iter()
            .zip(values)
            .filter_map(|(slot, v)| v.map(|v| (slot.path.clone(), v)))
            .collect();
        Configuration {
            assignments,
            space_version: self.version,
        }
    }

    /// Checks the active-set invariant: exactly the active paths are
    /// assigned and each value lies in its range.
    pub fn validate_config(&self, config: &Configuration) -> Result<()> {
        let layout = self.layout();
        let mut seen = 0usize;
        layout.walk(|_, slot| {
            let v = config.get(&slot.path).ok_or_else(|| SpaceError::InvalidConfig {
                path: slot.path.clone(),
                message: "active parameter is not assigned".into(),
            })?;
            if !slot.domain.contains(v) {
                return Err(SpaceError::InvalidConfig {
                    path: slot.path.clone(),
                    message: format!("value {v} is outside the {} range", slot.domain.kind_name()),
                });
            }
            seen += 1;
            Ok(v.clone())
        })?;
        if seen != config.len() {
            let active: std::collections::HashSet<&str> = self
                .layout()
                .walk::<()>(|_, slot| config.get(&slot.path).cloned().ok_or(()))
                .map(|vals| {
                    layout
                        .slots()
                        .iter()
                        .zip(vals)
                        .filter(|(_, v)| v.is_some())
                        .map(|(s, _)| s.path.as_str())
                        .collect()
                })
                .unwrap_or_default();
            let extra = config
                .assignments
                .keys()
                .find(|p| !active.contains(p.as_str()))
                .cloned()
                .unwrap_or_default();
            return Err(SpaceError::InvalidConfig {
                path: extra,
                message: "parameter is assigned but not active".into(),
            });
        }
        Ok(())
    }

    /// Fixed-length encoding: active dims in [0,1], inactive dims at -1.
    pub fn encode(&self, config: &Configuration) -> Result<Vec<f64>> {
        if config.space_version != self.version {
            return Err(SpaceError::VersionMismatch {
                config: config.space_version,
                space: self.version,
            });
        }
        Ok(self.encode_projected(config))
    }

    /// Encodes a configuration from any version of this space's lineage:
    /// numeric values are clamped into the current ranges and values the
    /// current space cannot express are treated as inactive.
    pub fn encode_projected(&self, config: &Configuration) -> Vec<f64> {
        let layout = self.layout();
        // An unexpressible value deactivates its whole subtree.
        let mut values: Vec<Option<Value>> = Vec::with_capacity(layout.len());
        for slot in layout.slots() {
            let v = if slot.is_active(&values) {
                config.get(&slot.path).and_then(|v| slot.domain.project(v))
            } else {
                None
            };
            values.push(v);
        }
        layout
            .slots()
            .iter()
            .zip(values)
            .map(|(slot, v)| match v {
                Some(v) => slot.domain.to_unit(&v).unwrap_or(INACTIVE),
                None => INACTIVE,
            })
            .collect()
    }

    pub fn decode(&self, vector: &[f64]) -> Result<Configuration> {
        let layout = self.layout();
        if vector.len() != layout.len() {
            return Err(SpaceError::BadLength {
                got: vector.len(),
                expected: layout.len(),
            });
        }
        for (slot, &x) in vector.iter().enumerate() {
            if !((0.0..=1.0).contains(&x) || x == INACTIVE) {
                return Err(SpaceError::BadEncoding { slot, value: x });
            }
        }
        let values = layout.walk(|i, slot| {
            let x = vector[i];
            if x == INACTIVE {
                return Err(SpaceError::BadEncoding { slot: i, value: x });
            }
            Ok(slot.domain.from_unit(x))
        })?;
        Ok(self.collect(values))
    }

    /// Builds a valid configuration that keeps every value from `base` the
    /// current space can express (clamping numerics), applies `overrides`
    /// first, and samples whatever becomes newly active.
    pub fn rebuild(
        &self,
        base: &Configuration,
        overrides: &IndexMap<String, Value>,
        rng: &mut impl Rng,
    ) -> Configuration {
        let values = self
            .layout()
            .walk::<std::convert::Infallible>(|_, slot| {
                let kept = overrides
                    .get(&slot.path)
                    .or_else(|| base.get(&slot.path))
                    .and_then(|v| slot.domain.project(v));
                Ok(kept.unwrap_or_else(|| sample_domain(&slot.domain, rng)))
            })
            .unwrap_or_else(|e| match e {});
        self.collect(values)
    }

    /// Re-samples exactly one active parameter to a different value,
    /// cascading into any submodule whose activation changes. Returns the
    /// mutated path, or `None` when every active parameter is fixed.
    pub fn mutate(&self, config: &Configuration, rng: &mut impl Rng) -> (Configuration, Option<String>) {
        let base = self.rebuild(config, &IndexMap::new(), rng);
        let layout = self.layout();
        let mut candidates: Vec<(usize, &Value)> = base
            .assignments
            .iter()
            .filter_map(|(p, v)| layout.slot_index(p).map(|i| (i, v)))
            .collect();
        candidates.shuffle(rng);
        for (i, current) in candidates {
            let slot = &layout.slots()[i];
            if let Some(v) = resample_other(&slot.domain, current, rng) {
                let mut overrides = IndexMap::new();
                overrides.insert(slot.path.clone(), v);
                return (self.rebuild(&base, &overrides, rng), Some(slot.path.clone()));
            }
        }
        (base, None)
    }

    /// Every configuration of a finite space, or `None` if the space has a
    /// continuous parameter or more than `limit` configurations.
    pub fn enumerate(&self, limit: usize) -> Option<Vec<Configuration>> {
        if self.size()? > limit as f64 {
            return None;
        }
        let layout = self.layout();
        let mut out = Vec::new();
        let mut values: Vec<Option<Value>> = Vec::with_capacity(layout.len());
        self.enumerate_from(0, &mut values, &mut out);
        Some(out)
    }

    fn enumerate_from(
        &self,
        i: usize,
        values: &mut Vec<Option<Value>>,
        out: &mut Vec<Configuration>,
    ) {
        let layout = self.layout();
        if i == layout.len() {
            out.push(self.collect(values.clone()));
            return;
        }
        let slot = &layout.slots()[i];
        let active = slot.is_active(values);
        if !active {
            values.push(None);
            self.enumerate_from(i + 1, values, out);
            values.pop();
            return;
        }
        let options: Vec<Value> = match &slot.domain {
            Domain::Int { lo, hi } => (*lo..=*hi).map(Value::Int).collect(),
            Domain::Choice { values } => values.iter().cloned().map(Value::Choice).collect(),
            Domain::Float { .. } => unreachable!("size() is None for float spaces"),
        };
        for v in options {
            values.push(Some(v));
            self.enumerate_from(i + 1, values, out);
            values.pop();
        }
    }
}
