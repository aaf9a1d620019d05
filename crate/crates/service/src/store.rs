use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use caaf_core::agents::AgentSet;
use caaf_core::converge::{RunConfig, RunState, RunStatus, TraceEvent};
use caaf_core::harness::{load_registry, save_registry, HarnessRegistry};
use caaf_core::rad::ProblemSpec;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

const EVENTS: &str = "events.jsonl";
const REQUEST: &str = "request.json";
const STATE: &str = "state.json";

/// The pipeline returned an error instead of a state.
pub const ERROR: &str = "ERROR";
/// The log stops mid-run: the process died while the pipeline was working.
pub const INTERRUPTED: &str = "INTERRUPTED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub status: String,
    pub harness: String,
    pub harness_version: String,
    pub awaiting_authorization: bool,
    /// Set when loading found unreadable log lines or a cut-off run.
    pub degraded: bool,
}

#[derive(Serialize, Deserialize)]
struct RunRequest {
    created_at: DateTime<Utc>,
    problem: ProblemSpec,
    agents: AgentSet,
    config: RunConfig,
}

fn registry_file(overrides: usize) -> String {
    match overrides {
        0 => "harness.yaml".into(),
        n => format!("harness.override-{n}.yaml"),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn invalid_data(path: &Path, err: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("{}: {err}", path.display()))
}

pub struct Run {
    pub id: String,
    pub dir: PathBuf,
    pub created_at: DateTime<Utc>,
    pub problem: ProblemSpec,
    pub agents: AgentSet,
    pub config: RunConfig,
    inner: Mutex<Inner>,
    changed: watch::Sender<u64>,
}

pub(crate) struct Inner {
    pub events: Vec<TraceEvent>,
    /// Latest finished state, kept without its trace (`events` is the trace).
    pub state: Option<RunState>,
    pub registry: HarnessRegistry,
    pub status: String,
    pub harness_version: String,
    pub awaiting: bool,
    /// A pipeline segment is executing.
    pub busy: bool,
    pub degraded: bool,
    pub error: Option<String>,
    /// First storage failure; the run's endpoints answer 503 from then on.
    pub io_failure: Option<String>,
    log: Option<File>,
}

impl Inner {
    fn observe(&mut self, e: &TraceEvent) {
        match e.kind.as_str() {
            "run_started" => self.status = RunStatus::Running.as_str().into(),
            "status" => {
                if let Some(s) = e.payload["status"].as_str() {
                    self.status = s.to_string();
                    self.awaiting = s == RunStatus::FailedParadox.as_str();
                }
            }
            "override" => {
                self.status = RunStatus::Running.as_str().into();
                self.awaiting = false;
            }
            "deadlock_acknowledged" => self.awaiting = false,
            _ => {}
        }
    }

    /// Nothing more will be appended unless an operator acts.
    pub fn settled(&self) -> bool {
        !self.busy && !self.awaiting && self.status != RunStatus::Running.as_str()
    }

    /// The state to hand back to the pipeline, with its trace restored.
    pub fn take_state(&mut self) -> Option<RunState> {
        let mut st = self.state.take()?;
        st.trace = self.events.clone();
        Some(st)
    }
}

impl Run {
    pub(crate) fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn handle(&self) -> RunHandle {
        let inner = self.lock();
        RunHandle {
            run_id: self.id.clone(),
            created_at: self.created_at,
            status: inner.status.clone(),
            harness: inner.registry.name.clone(),
            harness_version: inner.harness_version.clone(),
            awaiting_authorization: inner.awaiting,
            degraded: inner.degraded,
        }
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.changed.subscribe()
    }

    fn bump(&self) {
        self.changed.send_modify(|n| *n += 1);
    }

    /// Writes `e` to the run's log, then publishes it.
    pub fn append(&self, e: &TraceEvent) {
        let mut inner = self.lock();
        let written = serde_json::to_string(e).map_err(io::Error::other).and_then(|line| {
            if inner.log.is_none() {
                inner.log = Some(OpenOptions::new().create(true).append(true).open(self.dir.join(EVENTS))?);
            }
            let log = inner.log.as_mut().expect("opened above");
            log.write_all(format!("{line}\n").as_bytes())?;
            log.sync_data()
        });
        if let Err(err) = written {
            tracing::error!(run = %self.id, "cannot append event {}: {err}", e.t);
            inner.io_failure.get_or_insert(err.to_string());
            inner.degraded = true;
        }
        inner.observe(e);
        inner.events.push(e.clone());
        drop(inner);
        self.bump();
    }

    /// Records the end of a pipeline segment.
    pub fn finish(&self, result: Result<RunState, String>) {
        let mut inner = self.lock();
        match result {
            Ok(mut st) => {
                st.trace.clear();
                inner.status = st.status.as_str().into();
                inner.awaiting = st.awaiting_authorization;
                inner.harness_version = st.harness_version.clone();
                let saved = serde_json::to_vec(&st)
                    .map_err(io::Error::other)
                    .and_then(|bytes| write_atomic(&self.dir.join(STATE), &bytes));
                if let Err(err) = saved {
                    tracing::error!(run = %self.id, "cannot save state: {err}");
                    inner.io_failure.get_or_insert(err.to_string());
                }
                inner.state = Some(st);
            }
            Err(msg) => {
                tracing::warn!(run = %self.id, "pipeline failed: {msg}");
                inner.status = ERROR.into();
                inner.awaiting = false;
                inner.error = Some(msg);
            }
        }
        inner.busy = false;
        drop(inner);
        self.bump();
    }

    /// Waits out a pipeline segment that is still wrapping up after it
    /// reported a paradox.
    pub async fn until_idle(&self) {
        let mut rx = self.subscribe();
        loop {
            rx.borrow_and_update();
            if !self.lock().busy {
                return;
            }
            if rx.changed().await.is_err() {
                return;
            }
        }
    }

    /// Saves the registry produced by the `n`th override.
    pub fn save_override_registry(&self, reg: &HarnessRegistry, n: usize) -> io::Result<()> {
        write_atomic(&self.dir.join(registry_file(n)), save_registry(reg).as_bytes())
    }

    fn load(dir: &Path) -> io::Result<Run> {
        let path = dir.join(REQUEST);
        let req: RunRequest = serde_json::from_slice(&fs::read(&path)?).map_err(|e| invalid_data(&path, e))?;
        let id = req
            .config
            .run_id
            .clone()
            .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_default();

        let mut events: Vec<TraceEvent> = Vec::new();
        let mut degraded = false;
        let log_path = dir.join(EVENTS);
        if log_path.exists() {
            for (i, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<TraceEvent>(&line) {
                    Ok(e) if e.t == events.len() as u64 => events.push(e),
                    Ok(e) => {
                        tracing::warn!(run = %id, "line {}: event t={} out of sequence, skipped", i + 1, e.t);
                        degraded = true;
                    }
                    Err(err) => {
                        tracing::warn!(run = %id, "line {}: unreadable event skipped: {err}", i + 1);
                        degraded = true;
                    }
                }
            }
        }

        let overrides = events.iter().filter(|e| e.kind == "override").count();
        let reg_path = dir.join(registry_file(overrides));
        let registry = load_registry(&reg_path).map_err(|e| invalid_data(&reg_path, e))?;

        let mut inner = Inner {
            events: Vec::new(),
            state: None,
            harness_version: registry.version.clone(),
            registry,
            status: RunStatus::Running.as_str().into(),
            awaiting: false,
            busy: false,
            degraded,
            error: None,
            io_failure: None,
            log: None,
        };
        for e in &events {
            inner.observe(e);
        }
        inner.events = events;

        let state_path = dir.join(STATE);
        if state_path.exists() {
            match serde_json::from_slice::<RunState>(&fs::read(&state_path)?) {
                Ok(st) if st.status.as_str() == inner.status && st.awaiting_authorization == inner.awaiting => {
                    inner.harness_version = st.harness_version.clone();
                    inner.state = Some(st);
                }
                Ok(_) => tracing::warn!(run = %id, "saved state lags the event log; ignoring it"),
                Err(err) => tracing::warn!(run = %id, "unreadable state: {err}"),
            }
        }
        if inner.status == RunStatus::Running.as_str() {
            inner.status = INTERRUPTED.into();
            inner.degraded = true;
        }
        if inner.awaiting && inner.state.is_none() {
            inner.degraded = true;
        }

        Ok(Run {
            id,
            dir: dir.to_path_buf(),
            created_at: req.created_at,
            problem: req.problem,
            agents: req.agents,
            config: req.config,
            inner: Mutex::new(inner),
            changed: watch::Sender::new(0),
        })
    }
}

pub struct RunStore {
    root: PathBuf,
    runs: RwLock<BTreeMap<String, Arc<Run>>>,
}

impl RunStore {
    /// Opens (creating if needed) `data_dir` and loads every run found in it.
    /// Run directories that cannot be read at all are skipped with a warning.
    pub fn open(data_dir: &Path) -> io::Result<RunStore> {
        let root = data_dir.join("runs");
        fs::create_dir_all(&root)?;
        let mut runs = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            match Run::load(&path) {
                Ok(run) => {
                    runs.insert(run.id.clone(), Arc::new(run));
                }
                Err(err) => tracing::warn!("skipping {}: {err}", path.display()),
            }
        }
        Ok(RunStore {
            root,
            runs: RwLock::new(runs),
        })
    }

    /// Persists a new run and registers it as busy. The caller starts the
    /// pipeline.
    pub fn create(
        &self,
        problem: ProblemSpec,
        registry: HarnessRegistry,
        agents: AgentSet,
        mut config: RunConfig,
    ) -> io::Result<Arc<Run>> {
        let id = format!("run-{}", uuid::Uuid::new_v4().simple());
        config.run_id = Some(id.clone());
        let dir = self.root.join(&id);
        fs::create_dir_all(&self.root)?;
        fs::create_dir(&dir)?;
        let req = RunRequest {
            created_at: Utc::now(),
            problem,
            agents,
            config,
        };
        write_atomic(&dir.join(REQUEST), &serde_json::to_vec_pretty(&req).map_err(io::Error::other)?)?;
        write_atomic(&dir.join(registry_file(0)), save_registry(&registry).as_bytes())?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS))?;
        let run = Arc::new(Run {
            id: id.clone(),
            dir,
            created_at: req.created_at,
            problem: req.problem,
            agents: req.agents,
            config: req.config,
            inner: Mutex::new(Inner {
                events: Vec::new(),
                state: None,
                harness_version: registry.version.clone(),
                registry,
                status: RunStatus::Running.as_str().into(),
                awaiting: false,
                busy: true,
                degraded: false,
                error: None,
                io_failure: None,
                log: Some(log),
            }),
            changed: watch::Sender::new(0),
        });
        self.runs.write().unwrap_or_else(|p| p.into_inner()).insert(id, run.clone());
        Ok(run)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Run>> {
        self.runs.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    /// Handles ordered by creation time.
    pub fn list(&self) -> Vec<RunHandle> {
        let runs: Vec<Arc<Run>> = self.runs.read().unwrap_or_else(|p| p.into_inner()).values().cloned().collect();
        let mut out: Vec<RunHandle> = runs.iter().map(|r| r.handle()).collect();
        out.sort_by(|a, b| (a.created_at, &a.run_id).cmp(&(b.created_at, &b.run_id)));
        out
    }
}
