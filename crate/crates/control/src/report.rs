//! Job reports as plain text, a JSON document, or CSV.

use std::fmt::Write as _;
use std::str::FromStr;

use hopper_core::space::Value;
use hopper_fabric::TaskState;
use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::state::{Candidate, ServiceState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Document,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "document" | "json" => Ok(Format::Document),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown report format `{other}` (text, document, csv)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("job {0} not found")]
    UnknownJob(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub fn render(state: &ServiceState, job: &str, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Text => text(state, job),
        Format::Document => document(state, job).map(|v| serde_json::to_string_pretty(&v).expect("json value")),
        Format::Csv => csv_rows(state, job),
    }
}

fn value_string(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Choice(c) => c.clone(),
    }
}

fn completed(state: &ServiceState, job: &str) -> Vec<Candidate> {
    state
        .candidates(job)
        .into_iter()
        .filter(|c| c.state == TaskState::Completed && c.scalar_reward.is_some())
        .collect()
}

/// One row per completed task: id, iteration, state, reward, duration,
/// then one column per parameter path seen in any row.
pub fn csv_rows(state: &ServiceState, job: &str) -> Result<String, ReportError> {
    if !state.jobs.contains_key(job) {
        return Err(ReportError::UnknownJob(job.into()));
    }
    let rows = completed(state, job);
    let params: IndexSet<&str> = rows.iter().flat_map(|c| c.config.assignments.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["task_id", "iteration", "state", "scalar_reward", "duration_s"];
    header.extend(params.iter().copied());
    w.write_record(&header)?;
    for c in &rows {
        let mut rec = vec![
            c.task_id.to_string(),
            c.iteration.to_string(),
            "COMPLETED".to_string(),
            c.scalar_reward.map(|r| r.to_string()).unwrap_or_default(),
            c.duration_s.map(|d| format!("{d:.3}")).unwrap_or_default(),
        ];
        rec.extend(params.iter().map(|p| c.config.assignments.get(*p).map(value_string).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn document(state: &ServiceState, job: &str) -> Result<serde_json::Value, ReportError> {
    let summary = state.summary(job).ok_or_else(|| ReportError::UnknownJob(job.into()))?;
    let rec = &state.jobs[job];
    Ok(json!({
        "summary": summary,
        "spec": rec.meta.spec,
        "rationale": rec.meta.rationale,
        "candidates": state.candidates(job),
        "iterations": rec.ledgers,
        "importance": rec.importance,
        "suggestion": rec.suggestion,
    }))
}

pub fn text(state: &ServiceState, job: &str) -> Result<String, ReportError> {
    let s = state.summary(job).ok_or_else(|| ReportError::UnknownJob(job.into()))?;
    let rec = &state.jobs[job];
    let mut out = String::new();
    let _ = writeln!(out, "job        {} ({})", s.id, s.name);
    let _ = writeln!(out, "status     {:?}", s.status);
    if let Some(d) = &s.diagnostic {
        let _ = writeln!(out, "diagnostic {d}");
    }
    let _ = writeln!(out, "strategy   {}", s.strategy);
    let _ = writeln!(out, "objective  {:?} {}", s.direction, s.objective);
    let _ = writeln!(out, "space      {}@{}", s.space_id, s.space_version);
    let _ = writeln!(
        out,
        "tasks      {} published, {} completed, {} failed, {} iterations",
        s.published, s.completed, s.failed, s.iterations
    );
    if let Some(d) = s.mean_duration {
        let _ = writeln!(out, "mean task  {d:.2}s");
    }
    match &s.best {
        Some(b) => {
            let _ = writeln!(out, "best       {} (task {})", b.scalar, b.task);
            for (k, v) in &b.config.assignments {
                let _ = writeln!(out, "  {k} = {}", value_string(v));
            }
        }
        None => {
            let _ = writeln!(out, "best       none");
        }
    }
    let mut top = completed(state, job);
    top.sort_by(|a, b| a.loss.unwrap_or(f64::INFINITY).total_cmp(&b.loss.unwrap_or(f64::INFINITY)));
    if !top.is_empty() {
        let _ = writeln!(out, "\ntop candidates");
        for c in top.iter().take(10) {
            let _ = writeln!(
                out,
                "  task {:>4}  iter {:>3}  reward {:>14}  {:>8}",
                c.task_id,
                c.iteration,
                c.scalar_reward.map(|r| format!("{r:.6}")).unwrap_or_default(),
                c.duration_s.map(|d| format!("{d:.2}s")).unwrap_or_default()
            );
        }
    }
    if let Some(imp) = &rec.importance {
        let _ = writeln!(out, "\nimportance ({} observations)", imp.observations);
        for p in &imp.params {
            let _ = writeln!(out, "  {:<32} {:.3}", p.path, p.fraction);
        }
    }
    Ok(out)
}
