use std::path::Path;

use hopper_core::strategy::StrategyConfig;
use hopper_estimator::{EstimatorConfig, TimeoutPolicy};
use hopper_fabric::ObjectiveSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid job document: {0}")]
    Parse(String),
    #[error("invalid job: {0}")]
    Invalid(String),
}

/// An evaluator or probe command, as one shell-like string or an argv list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Command {
    Line(String),
    Argv(Vec<String>),
}

impl Command {
    pub fn argv(&self) -> Result<Vec<String>, SpecError> {
        let argv = match self {
            Command::Line(s) => shlex::split(s).ok_or_else(|| SpecError::Invalid(format!("cannot split command `{s}`")))?,
            Command::Argv(v) => v.clone(),
        };
        if argv.is_empty() {
            return Err(SpecError::Invalid("empty command".into()));
        }
        Ok(argv)
    }
}

/// `id` or `id@version` of a stored space, or an inline space document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceRef {
    Stored(String),
    Inline(serde_yaml::Mapping),
}

impl SpaceRef {
    /// Splits a stored reference into id and optional version.
    pub fn stored(&self) -> Option<(&str, Option<u64>)> {
        let SpaceRef::Stored(s) = self else { return None };
        match s.rsplit_once('@') {
            Some((id, v)) => Some((id, v.parse().ok())),
            None => Some((s.as_str(), None)),
        }
    }
}

/// A job request. Unset fields are filled by the formatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub name: String,
    pub space: SpaceRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyConfig>,
    pub objective: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub max_evaluations: usize,
    #[serde(default = "one")]
    pub parallelism: usize,
    /// Upper bound on how long an iteration waits for a task, seconds.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_k: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub evaluator: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Command>,
    /// Wall-clock cap on one evaluator run, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_timeout: Option<f64>,
    /// Full-fidelity resource. Setting it declares that the evaluator
    /// honors `fidelity.resource`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_resource: Option<f64>,
    /// Run two tasks to check the evaluator before searching.
    #[serde(default = "yes")]
    pub smoke: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_t_max() -> f64 {
    600.0
}

impl JobSpec {
    /// Parses YAML (a superset of JSON).
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        serde_yaml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: &str| Err(SpecError::Invalid(m.to_string()));
        if self.name.trim().is_empty() {
            return bad("name is empty");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.max_evaluations == 0 {
            return bad("max_evaluations must be at least 1");
        }
        if let Some(b) = self.batch_size {
            if b == 0 || self.max_evaluations < b {
                return bad("batch_size must be between 1 and max_evaluations");
            }
        }
        if !(self.t_max > 0.0) {
            return bad("t_max must be positive");
        }
        if self.max_resource.is_some_and(|r| !(r >= 1.0)) {
            return bad("max_resource must be at least 1");
        }
        self.evaluator.argv()?;
        if let Some(p) = &self.probe {
            p.argv()?;
        }
        self.objective.validate().map_err(|e| SpecError::Invalid(e.to_string()))
    }

    pub fn fidelity_capable(&self) -> bool {
        self.max_resource.is_some_and(|r| r > 1.0)
    }

    /// Controller settings for a formatted spec.
    pub fn estimator_config(&self, job_id: &str) -> Result<EstimatorConfig, SpecError> {
        let strategy = self
            .strategy
            .clone()
            .ok_or_else(|| SpecError::Invalid("strategy not resolved".into()))?;
        let mut timeout = TimeoutPolicy::new(self.t_max);
        if let Some(k) = self.timeout_k {
            timeout.k = k;
        }
        timeout.t_min = self.t_min.unwrap_or(timeout.t_min).min(self.t_max);
        Ok(EstimatorConfig {
            job_id: job_id.to_string(),
            strategy,
            objective: self.objective.clone(),
            batch_size: self.batch_size.unwrap_or(self.parallelism).min(self.max_evaluations),
            max_evaluations: self.max_evaluations,
            max_resource: self.max_resource.unwrap_or(1.0),
            timeout,
            seed: self.seed,
        })
    }
}
