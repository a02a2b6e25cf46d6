//! The long-running service: owns the record log, the broker and one
//! pipeline thread per active job.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::Utc;
use hopper_core::advisor::{importance, suggest_space, MIN_OBSERVATIONS};
use hopper_core::space::{parse_space_with_id, DiffEntry, SearchSpace, SpaceError, SpaceStore};
use hopper_core::strategy::{SearchStrategy, Strategy, StrategyConfig};
use hopper_estimator::{Estimator, JobEvent, JobStatus, Step};
use hopper_fabric::{
    worker_loop, Broker, BrokerConfig, BrokerError, Clock, SubprocessEvaluator, Task, TaskKey, TaskOutcome,
    WorkerConfig, WorkerControl,
};
use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::formatter::{format_job, Fingerprint, KnowledgeRecord};
use crate::log::{read_records, RecordLog};
use crate::spec::{JobSpec, SpaceRef, SpecError};
use crate::state::{owner, JobMeta, JobSummary, LogRecord, ObservedRow, ServiceState};

pub const LOG_FILE: &str = "records.log";
const SMOKE_TASKS: usize = 2;
const RETRY_DELAY: Duration = Duration::from_millis(500);

/// Unix time in seconds, so task timestamps survive restarts.
#[derive(Debug, Default, Clone, Copy)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("persistence failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("service is shut down")]
    Halted,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Run `parallelism` in-process workers per job.
    pub local_workers: bool,
    pub broker: BrokerConfig,
    /// Records appended before the log is compacted into a snapshot.
    pub compact_after: usize,
    pub sync: bool,
    pub worker_idle_max: Duration,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            local_workers: true,
            broker: BrokerConfig::default(),
            compact_after: 5000,
            sync: false,
            worker_idle_max: Duration::from_millis(200),
        }
    }
}

/// One entry of a job's live stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub id: u64,
    pub job: String,
    pub kind: String,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Start,
    Smoke,
    Search,
    Advise,
    End,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Start => "start",
            Stage::Smoke => "smoke",
            Stage::Search => "search",
            Stage::Advise => "advise",
            Stage::End => "end",
        }
    }
}

/// Stage order of a job's pipeline.
pub fn pipeline(smoke: bool) -> Vec<Stage> {
    let mut g = DiGraph::<Stage, ()>::new();
    let start = g.add_node(Stage::Start);
    let search = g.add_node(Stage::Search);
    let advise = g.add_node(Stage::Advise);
    let end = g.add_node(Stage::End);
    if smoke {
        let s = g.add_node(Stage::Smoke);
        g.add_edge(start, s, ());
        g.add_edge(s, search, ());
    } else {
        g.add_edge(start, search, ());
    }
    g.add_edge(search, advise, ());
    g.add_edge(advise, end, ());
    toposort(&g, None)
        .expect("pipeline is acyclic")
        .into_iter()
        .map(|i| g[i])
        .collect()
}

#[derive(Default)]
struct JobControl {
    stop: Arc<AtomicBool>,
    rebind: Mutex<Option<u64>>,
    workers: Mutex<Vec<Arc<WorkerControl>>>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

struct Writer {
    log: RecordLog,
    since_snapshot: usize,
}

struct Shared {
    config: ServiceConfig,
    writer: Mutex<Writer>,
    state: RwLock<ServiceState>,
    broker: Arc<Broker>,
    spaces: SpaceStore,
    jobs: Mutex<HashMap<String, Arc<JobControl>>>,
    history: Mutex<HashMap<String, Vec<StreamEvent>>>,
    events: broadcast::Sender<StreamEvent>,
    submit: Mutex<()>,
    halted: AtomicBool,
}

/// Cheap to clone; all clones share one service.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

/// Replays a data directory without modifying it.
pub fn load_state(data_dir: &Path) -> Result<ServiceState, ServiceError> {
    let path = data_dir.join(LOG_FILE);
    if !path.exists() {
        return Ok(ServiceState::default());
    }
    let records = decode(read_records(&path)?)?;
    Ok(ServiceState::replay(&records))
}

fn decode(payloads: Vec<Vec<u8>>) -> Result<Vec<LogRecord>, ServiceError> {
    payloads
        .iter()
        .map(|p| serde_json::from_slice(p).map_err(|e| ServiceError::Invalid(format!("unreadable log record: {e}"))))
        .collect()
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let s = s.trim_matches('-').to_string();
    if s.is_empty() {
        "job".into()
    } else {
        s
    }
}

fn stream_record(record: &LogRecord) -> bool {
    !matches!(record, LogRecord::Checkpoint { .. } | LogRecord::Snapshot(_))
}

impl Service {
    /// Opens (or creates) a data directory, replays its log and resumes
    /// every job that had not finished.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(&config.data_dir)?;
        let (log, payloads) = RecordLog::open(&config.data_dir.join(LOG_FILE), config.sync)?;
        let records = decode(payloads)?;
        let mut state = ServiceState::default();
        let mut history: HashMap<String, Vec<StreamEvent>> = HashMap::new();
        for r in &records {
            state.apply(r);
            if let (Some(job), true) = (r.job(), stream_record(r)) {
                history.entry(job.to_string()).or_default().push(StreamEvent {
                    id: state.seq,
                    job: job.to_string(),
                    kind: r.kind().into(),
                    data: serde_json::to_value(r).unwrap_or_default(),
                });
            }
        }
        let spaces = SpaceStore::new();
        for s in &state.spaces {
            spaces.insert(s.clone())?;
        }
        let broker = Arc::new(Broker::new(Arc::new(WallClock), config.broker.clone()));
        broker.restore(state.tasks.values().flat_map(|q| q.values().cloned()));
        let (events, _) = broadcast::channel(4096);
        let shared = Arc::new(Shared {
            config,
            writer: Mutex::new(Writer {
                log,
                since_snapshot: records.len(),
            }),
            state: RwLock::new(state),
            broker: broker.clone(),
            spaces,
            jobs: Mutex::new(HashMap::new()),
            history: Mutex::new(history),
            events,
            submit: Mutex::new(()),
            halted: AtomicBool::new(false),
        });
        let weak = Arc::downgrade(&shared);
        broker.set_listener(move |e| {
            if let Some(s) = weak.upgrade() {
                if let Err(err) = s.record(LogRecord::Task(e.clone())) {
                    eprintln!("hopper: dropping task event: {err}");
                }
            }
        });
        let service = Service { shared };
        let unfinished: Vec<String> = {
            let st = service.shared.state.read().expect("state poisoned");
            st.jobs.values().filter(|j| !j.status.is_terminal()).map(|j| j.meta.id.clone()).collect()
        };
        for id in unfinished {
            service.launch(&id);
        }
        Ok(service)
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.shared.broker
    }

    pub fn spaces(&self) -> &SpaceStore {
        &self.shared.spaces
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    /// Runs `f` against a consistent view of the state.
    pub fn read<T>(&self, f: impl FnOnce(&ServiceState) -> T) -> T {
        f(&self.shared.state.read().expect("state poisoned"))
    }

    pub fn summary(&self, job: &str) -> Result<JobSummary, ServiceError> {
        self.read(|s| s.summary(job)).ok_or_else(|| ServiceError::NotFound(format!("job {job}")))
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.shared.events.subscribe()
    }

    /// Stream entries of `job` after `after`.
    pub fn history(&self, job: &str, after: u64) -> Vec<StreamEvent> {
        let h = self.shared.history.lock().expect("history poisoned");
        h.get(job)
            .map(|v| v.iter().filter(|e| e.id > after).cloned().collect())
            .unwrap_or_default()
    }

    pub fn record(&self, record: LogRecord) -> Result<u64, ServiceError> {
        self.shared.record(record)
    }

    /// Validates, formats and persists a job, then starts its pipeline.
    /// A repeated idempotency key returns the original job and `false`.
    pub fn submit(&self, spec: JobSpec) -> Result<(JobSummary, bool), ServiceError> {
        let _guard = self.shared.submit.lock().expect("submit lock poisoned");
        spec.validate()?;
        if let Some(k) = &spec.idempotency_key {
            if let Some(id) = self.read(|s| s.idempotency.get(k).cloned()) {
                return Ok((self.summary(&id)?, false));
            }
        }
        let number = self.read(|s| s.jobs.len() as u64) + 1;
        let id = format!("{}-{number}", slug(&spec.name));
        let space = match &spec.space {
            SpaceRef::Inline(doc) => {
                let text = serde_yaml::to_string(doc).map_err(|e| ServiceError::Invalid(e.to_string()))?;
                let space = parse_space_with_id(&text, &id)?;
                self.shared.spaces.insert(space.clone())?;
                self.record(LogRecord::Space(space.clone()))?;
                Arc::new(space)
            }
            SpaceRef::Stored(_) => {
                let (sid, version) = spec.space.stored().expect("stored reference");
                match version {
                    Some(v) => self.shared.spaces.get(sid, v)?,
                    None => self
                        .shared
                        .spaces
                        .head(sid)
                        .ok_or_else(|| ServiceError::NotFound(format!("space {sid}")))?,
                }
            }
        };
        let formatted = self.read(|s| format_job(&spec, &space, &s.knowledge));
        formatted.spec.estimator_config(&id)?;
        let meta = JobMeta {
            id: id.clone(),
            number,
            spec: formatted.spec,
            space_id: space.id.clone(),
            space_version: space.version,
            estimated_duration: formatted.estimated_duration,
            rationale: formatted.rationale,
            submitted_at: Utc::now(),
        };
        self.record(LogRecord::JobSubmitted {
            meta,
            idempotency_key: spec.idempotency_key.clone(),
        })?;
        self.launch(&id);
        Ok((self.summary(&id)?, true))
    }

    /// Stored space creation.
    pub fn create_space(&self, id: &str, text: &str) -> Result<Arc<SearchSpace>, ServiceError> {
        let space = parse_space_with_id(text, id)?;
        if self.shared.spaces.head(id).is_some() {
            return Err(ServiceError::Conflict(format!("space {id} exists")));
        }
        let space = self.shared.spaces.insert(space)?;
        self.record(LogRecord::Space((*space).clone()))?;
        Ok(space)
    }

    /// Derives a new version from the head `base`.
    pub fn edit_space(&self, id: &str, base: u64, edits: &[DiffEntry], note: &str) -> Result<Arc<SearchSpace>, ServiceError> {
        let space = self.shared.spaces.edit(id, base, edits, note)?;
        self.record(LogRecord::Space((*space).clone()))?;
        Ok(space)
    }

    /// Queues a rebind of a running job to `version` of its space; it takes
    /// effect at the next iteration boundary.
    pub fn rebind(&self, job: &str, version: u64) -> Result<(), ServiceError> {
        let summary = self.summary(job)?;
        if summary.status.is_terminal() {
            return Err(ServiceError::Conflict(format!("job {job} is {:?}", summary.status)));
        }
        if !self.shared.spaces.is_descendant(&summary.space_id, version, summary.space_version) {
            return Err(ServiceError::Conflict(format!(
                "{}@{version} does not descend from {}@{}",
                summary.space_id, summary.space_id, summary.space_version
            )));
        }
        let control = self.control(job);
        *control.rebind.lock().expect("rebind poisoned") = Some(version);
        Ok(())
    }

    pub fn stop(&self, job: &str) -> Result<JobSummary, ServiceError> {
        let summary = self.summary(job)?;
        if !summary.status.is_terminal() {
            self.control(job).stop.store(true, Ordering::SeqCst);
        }
        Ok(summary)
    }

    /// Blocks until the job's pipeline thread exits.
    pub fn join(&self, job: &str) {
        let control = self.control(job);
        let handle = control.thread.lock().expect("thread slot poisoned").take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    /// Simulates a crash: nothing further is persisted, pipelines stop
    /// and local workers abandon their tasks. Pipeline threads are not
    /// joined.
    pub fn halt(&self) {
        self.shared.halted.store(true, Ordering::SeqCst);
        let jobs: Vec<Arc<JobControl>> = self.shared.jobs.lock().expect("jobs poisoned").values().cloned().collect();
        for c in jobs {
            c.stop.store(true, Ordering::SeqCst);
            for w in c.workers.lock().expect("workers poisoned").iter() {
                w.kill.store(true, Ordering::SeqCst);
            }
        }
    }

    fn control(&self, job: &str) -> Arc<JobControl> {
        self.shared
            .jobs
            .lock()
            .expect("jobs poisoned")
            .entry(job.to_string())
            .or_default()
            .clone()
    }

    fn launch(&self, job: &str) {
        let control = self.control(job);
        let service = self.clone();
        let id = job.to_string();
        let handle = thread::Builder::new()
            .name(format!("job-{job}"))
            .spawn(move || service.run_pipeline(&id))
            .expect("spawn pipeline thread");
        *control.thread.lock().expect("thread slot poisoned") = Some(handle);
    }

    fn halted(&self) -> bool {
        self.shared.halted.load(Ordering::SeqCst)
    }

    fn run_pipeline(&self, job: &str) {
        let Some((meta, stage)) = self.read(|s| s.jobs.get(job).map(|j| (j.meta.clone(), j.stage.clone()))) else {
            return;
        };
        let control = self.control(job);
        let stages = pipeline(meta.spec.smoke);
        let resume_from = match stage.as_deref() {
            Some("search") | Some("advise") | Some("end") => stages
                .iter()
                .position(|s| Some(s.name()) == stage.as_deref())
                .unwrap_or(0),
            _ => 0,
        };
        let mut outcome: Result<JobStatus, String> = Ok(JobStatus::Running);
        for (i, st) in stages.iter().enumerate() {
            if self.halted() {
                return;
            }
            // workers must exist before any stage that needs them
            if i < resume_from && *st != Stage::Start {
                continue;
            }
            if *st != Stage::Start && *st != Stage::End && outcome.is_err() {
                continue;
            }
            if *st != Stage::Start && self.record(LogRecord::Stage { job: job.into(), stage: st.name().into() }).is_err() {
                return;
            }
            match st {
                Stage::Start => {
                    if i >= resume_from {
                        let _ = self.record(LogRecord::Stage { job: job.into(), stage: st.name().into() });
                        let _ = self.set_status(job, JobStatus::Running, None);
                    }
                    self.start_workers(&meta, &control);
                }
                Stage::Smoke => {
                    if let Err(e) = self.smoke(&meta, &control) {
                        outcome = Err(e);
                    }
                }
                Stage::Search => outcome = self.search(&meta, &control),
                Stage::Advise => self.advise(&meta),
                Stage::End => {
                    for w in control.workers.lock().expect("workers poisoned").drain(..) {
                        w.stop.store(true, Ordering::SeqCst);
                    }
                    if self.halted() {
                        return;
                    }
                    let (status, diag) = match &outcome {
                        Ok(s) => (s.clone(), None),
                        Err(d) => (JobStatus::Failed, Some(d.clone())),
                    };
                    if let Some(k) = self.knowledge(&meta) {
                        let _ = self.record(LogRecord::Knowledge(k));
                    }
                    let _ = self.set_status(job, status, diag);
                }
            }
        }
    }

    fn set_status(&self, job: &str, status: JobStatus, diagnostic: Option<String>) -> Result<u64, ServiceError> {
        self.record(LogRecord::JobStatus {
            job: job.into(),
            status,
            diagnostic,
            at: Utc::now(),
        })
    }

    fn start_workers(&self, meta: &JobMeta, control: &JobControl) {
        if !self.shared.config.local_workers {
            return;
        }
        let spec = &meta.spec;
        let Ok(argv) = spec.evaluator.argv() else { return };
        let mut evaluator = SubprocessEvaluator::new(argv, self.shared.config.data_dir.join("artifacts"));
        evaluator.probe = spec.probe.as_ref().and_then(|p| p.argv().ok());
        evaluator.timeout = Duration::from_secs_f64(spec.eval_timeout.unwrap_or(spec.t_max.max(1.0) * 4.0));
        let evaluator = Arc::new(evaluator);
        let mut workers = control.workers.lock().expect("workers poisoned");
        for i in 0..spec.parallelism {
            let w = Arc::new(WorkerControl::default());
            workers.push(w.clone());
            let broker = self.shared.broker.clone();
            let evaluator = evaluator.clone();
            let mut cfg = WorkerConfig::new(format!("local-{}-{i}", meta.id));
            cfg.job = Some(meta.id.clone());
            cfg.idle_max = self.shared.config.worker_idle_max;
            thread::Builder::new()
                .name(format!("worker-{}-{i}", meta.id))
                .spawn(move || worker_loop(&*broker, &*evaluator, &cfg, &w))
                .expect("spawn worker thread");
        }
    }

    /// Runs a couple of sampled configurations to catch a broken evaluator
    /// before the search spends its budget.
    fn smoke(&self, meta: &JobMeta, control: &JobControl) -> Result<(), String> {
        let queue = format!("{}~smoke", meta.id);
        let space = self
            .shared
            .spaces
            .get(&meta.space_id, meta.space_version)
            .map_err(|e| e.to_string())?;
        let mut sampler = Strategy::from_config(&StrategyConfig::Random, meta.spec.seed ^ 0x5eed, meta.spec.max_resource.unwrap_or(1.0))
            .map_err(|e| e.to_string())?;
        sampler.bind_space(space);
        let proposals = sampler.generate_tasks(SMOKE_TASKS).map_err(|e| e.to_string())?;
        let broker = &self.shared.broker;
        let mut keys = Vec::new();
        for (i, p) in proposals.into_iter().enumerate() {
            let key = TaskKey::new(queue.clone(), i as u64);
            match broker.publish(Task::new(key.clone(), 0, p.config, p.fidelity)) {
                Ok(()) | Err(BrokerError::DuplicateTask(_)) => keys.push(key),
                Err(e) => return Err(e.to_string()),
            }
        }
        let limit = broker.clock().now() + meta.spec.eval_timeout.unwrap_or(meta.spec.t_max) * 2.0;
        broker.wait_until(limit, Some(&control.stop), |t| {
            keys.iter().all(|k| t.get(k).is_some_and(|t| t.state.is_resolved()))
        });
        if self.halted() {
            return Err("halted".into());
        }
        let tasks: Vec<Task> = keys.iter().filter_map(|k| broker.get(k)).collect();
        let key = &meta.spec.objective.key;
        if tasks.iter().any(|t| t.record().is_some_and(|r| r.all_metrics().contains_key(key))) {
            return Ok(());
        }
        if control.stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        let detail = tasks
            .iter()
            .find_map(|t| match &t.outcome {
                Some(TaskOutcome::Failed { diagnostic }) => Some(diagnostic.clone()),
                Some(TaskOutcome::Completed { .. }) => Some(format!("evaluator did not report `{key}`")),
                None => None,
            })
            .unwrap_or_else(|| "no smoke task finished in time".into());
        Err(format!("smoke test failed: {detail}"))
    }

    fn search(&self, meta: &JobMeta, control: &Arc<JobControl>) -> Result<JobStatus, String> {
        let broker = self.shared.broker.clone();
        let checkpoint = self.read(|s| s.jobs.get(&meta.id).and_then(|j| j.checkpoint.clone()));
        let estimator = match checkpoint {
            Some(sealed) => Estimator::resume(sealed.as_bytes(), broker),
            None => {
                let config = meta.spec.estimator_config(&meta.id).map_err(|e| e.to_string())?;
                let space = self
                    .shared
                    .spaces
                    .get(&meta.space_id, meta.space_version)
                    .map_err(|e| e.to_string())?;
                Estimator::new(config, space, broker)
            }
        };
        let mut estimator = estimator.map_err(|e| e.to_string())?;
        let service = self.clone();
        estimator = estimator
            .with_observer(Arc::new(move |e: &JobEvent| service.observe(e)))
            .with_stop(control.stop.clone());
        loop {
            if self.halted() {
                return Err("halted".into());
            }
            let rebind = control.rebind.lock().expect("rebind poisoned").take();
            if let Some(v) = rebind {
                let id = estimator.state().space_id.clone();
                if let Err(e) = estimator.apply_space_edit(&self.shared.spaces, &id, v) {
                    eprintln!("hopper: {}: {e}", meta.id);
                }
            }
            match estimator.run_iteration() {
                Ok(step) => {
                    let sealed = String::from_utf8(estimator.checkpoint()).expect("checkpoints are JSON");
                    if self.record(LogRecord::Checkpoint { job: meta.id.clone(), sealed }).is_err() {
                        return Err("halted".into());
                    }
                    if let Step::Finished(status) = step {
                        return match status {
                            JobStatus::Failed => Err(estimator.state().diagnostic.clone().unwrap_or_else(|| "failed".into())),
                            s => Ok(s),
                        };
                    }
                }
                Err(e) if e.is_retryable() => thread::sleep(RETRY_DELAY),
                Err(e) => return Err(e.to_string()),
            }
        }
    }

    fn observe(&self, event: &JobEvent) {
        let record = match event {
            // the pipeline owns terminal transitions
            JobEvent::StatusChanged { .. } | JobEvent::IterationStarted { .. } => return,
            JobEvent::Observed {
                job,
                task,
                scalar,
                loss,
                late,
                ..
            } => LogRecord::Observed {
                job: job.clone(),
                row: ObservedRow {
                    task: *task,
                    scalar: *scalar,
                    loss: *loss,
                    late: *late,
                },
            },
            JobEvent::TimedOut { job, task, iteration } => LogRecord::TimedOut {
                job: job.clone(),
                task: *task,
                iteration: *iteration,
            },
            JobEvent::IterationClosed { job, ledger } => LogRecord::Iteration {
                job: job.clone(),
                ledger: ledger.clone(),
            },
            JobEvent::SpaceRebound { job, space_id, version } => LogRecord::SpaceRebound {
                job: job.clone(),
                space_id: space_id.clone(),
                version: *version,
            },
        };
        let _ = self.record(record);
    }

    fn advise(&self, meta: &JobMeta) {
        let (obs, version) = self.read(|s| {
            (
                s.observations(&meta.id),
                s.jobs.get(&meta.id).map(|j| j.space_version).unwrap_or(meta.space_version),
            )
        });
        if obs.len() < MIN_OBSERVATIONS {
            return;
        }
        let Ok(space) = self.shared.spaces.get(&meta.space_id, version) else { return };
        let imp = importance(&obs, &space, meta.spec.seed).ok();
        let suggestion = suggest_space(&obs, &space, 0.25).ok();
        let _ = self.record(LogRecord::Advice {
            job: meta.id.clone(),
            importance: imp,
            suggestion,
        });
    }

    fn knowledge(&self, meta: &JobMeta) -> Option<KnowledgeRecord> {
        let space = self.shared.spaces.get(&meta.space_id, meta.space_version).ok()?;
        let summary = self.summary(&meta.id).ok()?;
        Some(KnowledgeRecord {
            job: meta.id.clone(),
            fingerprint: Fingerprint::of(&space, &meta.spec.objective),
            strategy: summary.strategy,
            best: summary.best.map(|b| b.scalar),
            evaluations: summary.observed,
            mean_duration: summary.mean_duration,
        })
    }
}

impl Shared {
    /// Appends, folds and broadcasts one record. Lock order is writer then
    /// state; callers may hold the broker lock but never the reverse.
    fn record(&self, record: LogRecord) -> Result<u64, ServiceError> {
        if self.halted.load(Ordering::SeqCst) {
            return Err(ServiceError::Halted);
        }
        let payload = serde_json::to_vec(&record).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let mut writer = self.writer.lock().expect("writer poisoned");
        writer.log.append(&payload)?;
        writer.since_snapshot += 1;
        let seq = {
            let mut state = self.state.write().expect("state poisoned");
            state.apply(&record);
            state.seq
        };
        if let (Some(job), true) = (record.job(), stream_record(&record)) {
            let event = StreamEvent {
                id: seq,
                job: owner(job).to_string(),
                kind: record.kind().into(),
                data: serde_json::to_value(&record).unwrap_or_default(),
            };
            self.history
                .lock()
                .expect("history poisoned")
                .entry(event.job.clone())
                .or_default()
                .push(event.clone());
            let _ = self.events.send(event);
        }
        if writer.since_snapshot >= self.config.compact_after {
            let snapshot = {
                let state = self.state.read().expect("state poisoned");
                LogRecord::Snapshot(Box::new(state.clone()))
            };
            let bytes = serde_json::to_vec(&snapshot).map_err(|e| ServiceError::Invalid(e.to_string()))?;
            writer.log.rewrite(&[bytes])?;
            writer.since_snapshot = 1;
        }
        Ok(seq)
    }
}
