use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hopper_control::client::HttpBroker;
use hopper_control::formatter::format_job;
use hopper_control::report::{self, Format};
use hopper_control::service::{load_state, Service, ServiceConfig};
use hopper_control::spec::{Command as EvalCommand, JobSpec, SpaceRef};
use hopper_control::state::LogRecord;
use hopper_core::space::parse_space_with_id;
use hopper_estimator::JobStatus;
use hopper_fabric::{worker_loop, SubprocessEvaluator, WorkerConfig, WorkerControl};

#[derive(Parser)]
#[command(name = "hopper", version, about = "Hyperparameter and architecture search service")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a job to completion with in-process workers.
    Run {
        spec: PathBuf,
        #[arg(long, default_value = "hopper-data")]
        data: PathBuf,
        /// Suppress per-iteration progress.
        #[arg(long)]
        quiet: bool,
    },
    /// Show one job, or list all jobs.
    Status {
        job: Option<String>,
        #[arg(long, default_value = "hopper-data")]
        data: PathBuf,
    },
    /// Render a job report.
    Report {
        job: String,
        #[arg(long, default_value = "hopper-data")]
        data: PathBuf,
        #[arg(long, default_value = "text")]
        format: Format,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "hopper-data")]
        data: PathBuf,
        /// Leave evaluation to remote `hopper worker` processes.
        #[arg(long)]
        no_local_workers: bool,
    },
    /// Pull tasks from a server and run the evaluator command on them.
    Worker {
        #[arg(long)]
        server: String,
        /// Only take tasks of this job.
        #[arg(long)]
        job: Option<String>,
        #[arg(long)]
        id: Option<String>,
        /// Deployment probe command, run on each artifact.
        #[arg(long)]
        probe: Option<String>,
        #[arg(long, default_value = "hopper-artifacts")]
        artifacts: PathBuf,
        /// Per-task wall-clock limit, seconds.
        #[arg(long, default_value_t = 3600.0)]
        timeout: f64,
        #[arg(long)]
        max_tasks: Option<usize>,
        #[arg(required = true, last = true)]
        command: Vec<String>,
    },
    /// Print the fully formatted job without running it.
    Format {
        spec: PathBuf,
        #[arg(long, default_value = "hopper-data")]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hopper: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Run { spec, data, quiet } => run(&spec, data, quiet),
        Cmd::Status { job, data } => status(job.as_deref(), &data),
        Cmd::Report {
            job,
            data,
            format,
            output,
        } => {
            let state = load_state(&data)?;
            if !state.jobs.contains_key(&job) {
                eprintln!("hopper: unknown job {job}");
                return Ok(ExitCode::from(2));
            }
            let body = report::render(&state, &job, format)?;
            match output {
                Some(path) => std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{body}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve {
            addr,
            data,
            no_local_workers,
        } => serve(addr, data, !no_local_workers),
        Cmd::Worker {
            server,
            job,
            id,
            probe,
            artifacts,
            timeout,
            max_tasks,
            command,
        } => {
            let broker = HttpBroker::new(&server)?;
            let mut evaluator = SubprocessEvaluator::new(command, artifacts);
            evaluator.timeout = std::time::Duration::from_secs_f64(timeout);
            if let Some(p) = probe {
                evaluator.probe = Some(EvalCommand::Line(p).argv()?);
            }
            let mut config = WorkerConfig::new(id.unwrap_or_else(|| format!("worker-{}", std::process::id())));
            config.job = job;
            config.max_tasks = max_tasks;
            let stats = worker_loop(&broker, &evaluator, &config, &WorkerControl::default());
            println!("{}", serde_json::to_string(&stats)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Format { spec, data } => {
            let spec = JobSpec::load(&spec)?;
            spec.validate()?;
            let state = load_state(&data)?;
            let space = match &spec.space {
                SpaceRef::Inline(doc) => parse_space_with_id(&serde_yaml::to_string(doc)?, "inline")?,
                SpaceRef::Stored(_) => {
                    let (id, version) = spec.space.stored().expect("stored reference");
                    state
                        .spaces
                        .iter()
                        .rev()
                        .find(|s| s.id == id && version.is_none_or(|v| s.version == v))
                        .cloned()
                        .with_context(|| format!("space {id} not found in {}", data.display()))?
                }
            };
            let formatted = format_job(&spec, &space, &state.knowledge);
            print!("{}", serde_yaml::to_string(&formatted.spec)?);
            for line in &formatted.rationale {
                println!("# {line}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(path: &PathBuf, data: PathBuf, quiet: bool) -> Result<ExitCode> {
    let spec = JobSpec::load(path)?;
    let service = Service::open(ServiceConfig::new(data))?;
    let mut rx = service.subscribe();
    let (summary, _) = service.submit(spec)?;
    let id = summary.id.clone();
    println!("job {id}: {}", summary.strategy);
    let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let progress = (!quiet).then(|| {
        let (id, done, service) = (id.clone(), done.clone(), service.clone());
        std::thread::spawn(move || {
            while !done.load(Ordering::SeqCst) {
                let Ok(e) = rx.blocking_recv() else { break };
                if e.job != id {
                    continue;
                }
                match serde_json::from_value::<LogRecord>(e.data) {
                    Ok(LogRecord::Iteration { ledger, .. }) => {
                        let best = service.summary(&id).ok().and_then(|s| s.best).map(|b| b.scalar);
                        eprintln!(
                            "iteration {}: {} issued, {} completed, {} failed, {} timed out, best {}",
                            ledger.iteration,
                            ledger.issued.len(),
                            ledger.completed.len(),
                            ledger.failed.len(),
                            ledger.timed_out.len(),
                            best.map(|b| b.to_string()).unwrap_or_else(|| "-".into())
                        );
                    }
                    Ok(LogRecord::JobStatus { status, .. }) if status.is_terminal() => break,
                    _ => {}
                }
            }
        })
    });
    service.join(&id);
    done.store(true, Ordering::SeqCst);
    let summary = service.summary(&id)?;
    if let Some(p) = progress {
        let _ = p.join();
    }
    print!("{}", service.read(|s| report::text(s, &id))?);
    Ok(if summary.status == JobStatus::Complete {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn status(job: Option<&str>, data: &PathBuf) -> Result<ExitCode> {
    let state = load_state(data)?;
    match job {
        Some(id) => match state.summary(id) {
            Some(s) => {
                println!("{}", serde_json::to_string_pretty(&s)?);
                Ok(ExitCode::SUCCESS)
            }
            None => {
                eprintln!("hopper: unknown job {id}");
                Ok(ExitCode::from(2))
            }
        },
        None => {
            let mut jobs: Vec<_> = state.jobs.values().collect();
            jobs.sort_by_key(|j| j.meta.number);
            for j in jobs {
                println!("{:<24} {:<9} {}", j.meta.id, format!("{:?}", j.status).to_uppercase(), j.meta.spec.name);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn serve(addr: SocketAddr, data: PathBuf, local_workers: bool) -> Result<ExitCode> {
    let mut config = ServiceConfig::new(data);
    config.local_workers = local_workers;
    let service = Service::open(config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("hopper: listening on http://{}", listener.local_addr()?);
        axum::serve(listener, hopper_control::api::router(service)).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}
