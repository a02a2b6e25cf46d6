use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{AdvisorError, MIN_OBSERVATIONS};
use crate::space::{DiffEntry, Domain, SearchSpace, SpaceDiff, Value};
use crate::strategy::{Observation, TaskId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedValues {
    pub path: String,
    /// Choice values no incumbent uses; candidates for removal.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSuggestion {
    pub diff: SpaceDiff,
    pub flagged: Vec<FlaggedValues>,
    pub quantile: f64,
    pub incumbents: Vec<TaskId>,
    pub rationale: String,
}

const MARGIN: f64 = 0.1;

/// Shrinks numeric ranges to the span of the top `quantile` of
/// observations, widened by 10% of the original width and clamped. Unused
/// choice values are flagged, never removed.
pub fn suggest_space(observations: &[Observation], space: &SearchSpace, quantile: f64) -> Result<SpaceSuggestion, AdvisorError> {
    let n = observations.len();
    if n < MIN_OBSERVATIONS {
        return Err(AdvisorError::InsufficientData {
            need: MIN_OBSERVATIONS,
            got: n,
        });
    }
    let quantile = quantile.clamp(f64::MIN_POSITIVE, 1.0);
    let lo = observations.iter().map(|o| o.reward).fold(f64::INFINITY, f64::min);
    let hi = observations.iter().map(|o| o.reward).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
        return Ok(SpaceSuggestion {
            diff: Vec::new(),
            flagged: Vec::new(),
            quantile,
            incumbents: Vec::new(),
            rationale: "no signal: every observation has the same reward".into(),
        });
    }
    let mut ranked: Vec<&Observation> = observations.iter().collect();
    ranked.sort_by(|a, b| a.reward.total_cmp(&b.reward).then(a.task_id.cmp(&b.task_id)));
    let k = ((quantile * n as f64).ceil() as usize).clamp(1, n);
    let top = &ranked[..k];

    // values per schema path, as the current space sees them
    let layout = space.layout();
    let mut seen: IndexMap<String, Vec<Value>> = IndexMap::new();
    for o in top {
        for slot in layout.slots() {
            if let Some(v) = o.config.get(&slot.path).and_then(|v| slot.domain.project(v)) {
                seen.entry(slot.schema_path.clone()).or_default().push(v);
            }
        }
    }

    let mut diff = Vec::new();
    let mut flagged = Vec::new();
    let mut notes = Vec::new();
    for (path, node) in space.schema_nodes() {
        let Some(values) = seen.get(&path) else { continue };
        let shrunk = match &node.domain {
            Domain::Int { lo, hi } => {
                let vs: Vec<i64> = values.iter().filter_map(|v| if let Value::Int(i) = v { Some(*i) } else { None }).collect();
                let (vmin, vmax) = (*vs.iter().min().unwrap(), *vs.iter().max().unwrap());
                let m = MARGIN * (hi - lo) as f64;
                let nlo = ((vmin as f64 - m).max(*lo as f64)).floor() as i64;
                let nhi = ((vmax as f64 + m).min(*hi as f64)).ceil() as i64;
                Domain::Int { lo: nlo, hi: nhi }
            }
            Domain::Float { lo, hi, log_scale } => {
                let t = |v: f64| if *log_scale { v.ln() } else { v };
                let inv = |v: f64| if *log_scale { v.exp() } else { v };
                let vs: Vec<f64> = values.iter().filter_map(|v| if let Value::Float(f) = v { Some(t(*f)) } else { None }).collect();
                let vmin = vs.iter().copied().fold(f64::INFINITY, f64::min);
                let vmax = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let m = MARGIN * (t(*hi) - t(*lo));
                Domain::Float {
                    lo: inv(vmin - m).clamp(*lo, *hi),
                    hi: inv(vmax + m).clamp(*lo, *hi),
                    log_scale: *log_scale,
                }
            }
            Domain::Choice { values: all } => {
                let used: BTreeSet<&str> = values
                    .iter()
                    .filter_map(|v| if let Value::Choice(c) = v { Some(c.as_str()) } else { None })
                    .collect();
                let unused: Vec<String> = all.iter().filter(|v| !used.contains(v.as_str())).cloned().collect();
                if !unused.is_empty() {
                    notes.push(format!("{path}: no incumbent uses {}", unused.join(", ")));
                    flagged.push(FlaggedValues { path: path.clone(), values: unused });
                }
                continue;
            }
        };
        if shrunk != node.domain {
            notes.push(format!("{path}: {} -> {}", describe(&node.domain), describe(&shrunk)));
            diff.push(DiffEntry::set_domain(path.clone(), Some(node.domain.clone()), shrunk));
        }
    }
    let rationale = if notes.is_empty() {
        format!("top {k} of {n} observations already span the space")
    } else {
        format!("top {k} of {n} observations: {}", notes.join("; "))
    };
    Ok(SpaceSuggestion {
        diff,
        flagged,
        quantile,
        incumbents: top.iter().map(|o| o.task_id).collect(),
        rationale,
    })
}

fn describe(d: &Domain) -> String {
    match d {
        Domain::Int { lo, hi } => format!("[{lo}...{hi}]"),
        Domain::Float { lo, hi, .. } => format!("[{lo}...{hi}]"),
        Domain::Choice { values } => format!("{{{}}}", values.join(", ")),
    }
}
