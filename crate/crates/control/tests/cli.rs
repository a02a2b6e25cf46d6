use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hopper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopper")).args(args).output().unwrap()
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").canonicalize().unwrap()
}

fn write_spec(dir: &Path, evaluator: &str, evals: usize) -> PathBuf {
    let path = dir.join("job.yaml");
    let text = format!(
        "name: cli\nspace:\n  x1: {{type: float, range: [-5...10]}}\n  x2: {{type: float, range: [0...15]}}\n\
         objective: {{key: score, direction: minimize}}\nmax_evaluations: {evals}\nparallelism: 3\nt_max: 30\n\
         evaluator: {evaluator}\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_status_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data = data.to_str().unwrap();
    let evaluator = format!("python3 {}", demo().join("branin.py").display());
    let spec = write_spec(dir.path(), &evaluator, 12);
    let out = hopper(&["run", spec.to_str().unwrap(), "--data", data]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.starts_with("job cli-1"));
    assert!(stdout.contains("status     Complete"));

    let out = hopper(&["status", "cli-1", "--data", data]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["status"], "COMPLETE");
    let completed = summary["completed"].as_u64().unwrap();
    assert_eq!(completed, 12);

    let csv_path = dir.path().join("out.csv");
    let out = hopper(&["report", "cli-1", "--data", data, "--format", "csv", "-o", csv_path.to_str().unwrap()]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["task_id", "iteration", "state", "scalar_reward", "duration_s", "x1", "x2"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len() as u64, completed);
    assert!(rows.iter().all(|r| &r[2] == "COMPLETED" && r[3].parse::<f64>().is_ok()));

    let out = hopper(&["report", "cli-1", "--data", data, "--format", "document"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["candidates"].as_array().unwrap().len(), 12);

    let out = hopper(&["status", "missing", "--data", data]);
    assert_eq!(out.status.code(), Some(2));
    let out = hopper(&["report", "missing", "--data", data]);
    assert_eq!(out.status.code(), Some(2));

    let out = hopper(&["format", spec.to_str().unwrap(), "--data", data]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("kind: bo"), "{text}");
    assert!(text.contains("task duration estimated from job cli-1"));
}

#[test]
fn broken_evaluator_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "python3 -c 'import sys; sys.exit(3)'", 6);
    let data = dir.path().join("data");
    let out = hopper(&["run", spec.to_str().unwrap(), "--data", data.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("smoke test failed"), "{stdout}");
}
