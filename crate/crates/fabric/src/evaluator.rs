//! Subprocess protocol: one JSON line in on stdin, one JSON line out on
//! stdout, exit status 0 for success.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use hopper_core::strategy::FidelityBudget;
use serde::{Deserialize, Serialize};

const STDERR_EXCERPT: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty command")]
    EmptyCommand,
    #[error("failed to launch `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("exited with {code:?}: {stderr}")]
    Exit { code: Option<i32>, stderr: String },
    #[error("killed after {0:.1}s wall-clock cap")]
    Timeout(f64),
    #[error("cancelled")]
    Cancelled,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInput {
    pub task_id: String,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub fidelity: FidelityBudget,
    pub artifact_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

#[derive(Serialize)]
struct ProbeInput<'a> {
    artifact: &'a str,
}

#[derive(Deserialize)]
struct ProbeOutput {
    metrics: BTreeMap<String, f64>,
}

fn excerpt(s: &str) -> String {
    let s = s.trim();
    if s.len() <= STDERR_EXCERPT {
        return s.to_string();
    }
    let mut start = s.len() - STDERR_EXCERPT;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    format!("...{}", &s[start..])
}

/// Runs `argv` with `input` on stdin and returns its single stdout line.
fn run_protocol(argv: &[String], input: &str, timeout: Duration, cancel: Option<&AtomicBool>) -> Result<String, EvalError> {
    let (program, args) = argv.split_first().ok_or(EvalError::EmptyCommand)?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| EvalError::Spawn {
            program: program.clone(),
            source,
        })?;
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let line = format!("{input}\n");
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(line.as_bytes());
    });
    let mut out = child.stdout.take().expect("stdout is piped");
    let mut err = child.stderr.take().expect("stderr is piped");
    let out_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out.read_to_end(&mut buf);
        buf
    });
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err.read_to_end(&mut buf);
        buf
    });

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| EvalError::Protocol(e.to_string()))? {
            break Ok(status);
        }
        if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            break Err(EvalError::Cancelled);
        }
        if started.elapsed() >= timeout {
            break Err(EvalError::Timeout(timeout.as_secs_f64()));
        }
        thread::sleep(Duration::from_millis(5));
    };
    if status.is_err() {
        let _ = child.kill();
        let _ = child.wait();
    }
    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    let status = status?;
    if !status.success() {
        return Err(EvalError::Exit {
            code: status.code(),
            stderr: excerpt(&String::from_utf8_lossy(&stderr)),
        });
    }
    let stdout = String::from_utf8(stdout).map_err(|_| EvalError::Protocol("stdout is not UTF-8".into()))?;
    let mut lines = stdout.lines().filter(|l| !l.trim().is_empty());
    match (lines.next(), lines.next()) {
        (Some(l), None) => Ok(l.to_string()),
        (None, _) => Err(EvalError::Protocol("no result document on stdout".into())),
        (Some(_), Some(_)) => Err(EvalError::Protocol("more than one line on stdout".into())),
    }
}

fn check_metrics(metrics: &BTreeMap<String, f64>) -> Result<(), EvalError> {
    match metrics.iter().find(|(_, v)| !v.is_finite()) {
        Some((k, _)) => Err(EvalError::Protocol(format!("metric `{k}` is not finite"))),
        None => Ok(()),
    }
}

/// Runs one training evaluation.
pub fn evaluate(argv: &[String], input: &EvalInput, timeout: Duration, cancel: Option<&AtomicBool>) -> Result<EvalOutput, EvalError> {
    let doc = serde_json::to_string(input).map_err(|e| EvalError::Protocol(e.to_string()))?;
    let line = run_protocol(argv, &doc, timeout, cancel)?;
    let out: EvalOutput = serde_json::from_str(&line).map_err(|e| EvalError::Protocol(format!("bad result document: {e}")))?;
    check_metrics(&out.metrics)?;
    Ok(out)
}

/// Measures a trained artifact on the deployment side.
pub fn deploy_probe(argv: &[String], artifact: &str, timeout: Duration) -> Result<BTreeMap<String, f64>, EvalError> {
    let doc = serde_json::to_string(&ProbeInput { artifact }).map_err(|e| EvalError::Protocol(e.to_string()))?;
    let line = run_protocol(argv, &doc, timeout, None)?;
    let out: ProbeOutput = serde_json::from_str(&line).map_err(|e| EvalError::Protocol(format!("bad probe document: {e}")))?;
    check_metrics(&out.metrics)?;
    Ok(out.metrics)
}
