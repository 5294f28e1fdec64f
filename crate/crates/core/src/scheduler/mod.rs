//! Prediction cycles: model archives, schedules, executors and publication.
//!
//! Each registered model owns a binding of window rules (one per input slot),
//! an executor (the built-in network or an external process) and an output
//! stream. A cycle at instant `as_of` assembles the input vector at `as_of`,
//! skips if any slot is empty, runs the executor, publishes the value on the
//! output stream and appends it to the repository.
//!
//! Cycles of one model are serialized; different models may run in parallel.
//! Time-scheduled models are driven by [`Scheduler::tick`], which fires every
//! boundary up to `now` exactly once (at most `max_catch_up` of them per call,
//! the oldest being skipped when more are overdue).

mod executor;
mod pma;
mod schedule;

pub use executor::{execute_external, validate_template, EngineRecord, ExecutorError, DEFAULT_TIMEOUT_SECS};
pub use pma::{ExecutorKind, PmaArchive, PmaManifest, DEFAULT_MODEL_FILE, MANIFEST, PMA_VERSION};
pub use schedule::{Schedule, Terminator};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::AnnModel;
use crate::clock::Clock;
use crate::notification::NotificationEvent;
use crate::repository::{Repository, RepositoryError};
use crate::stream_core::{Broker, BrokerError, StreamKind, Writer};
use crate::types::{format_ts, DataPoint, Timestamp};
use crate::windowing::{InputVector, WindowError, WindowRule, Windowing};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("bad archive: {0}")]
    BadArchive(String),
    #[error("model `{0}` already registered")]
    DuplicateModel(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
    #[error("engine `{0}` already registered")]
    DuplicateEngine(String),
    #[error("engine `{eid}` is used by model `{mid}`")]
    EngineInUse { eid: String, mid: String },
    #[error("invalid engine: {0}")]
    InvalidEngine(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("model `{0}` is already running")]
    AlreadyRunning(String),
    #[error("model `{0}` is not running")]
    NotRunning(String),
    #[error("model `{mid}` at {}: input slots {missing:?} are empty", format_ts(as_of))]
    IncompleteInputs {
        mid: String,
        as_of: Timestamp,
        missing: Vec<usize>,
    },
    #[error("model `{mid}`: cycle at {} precedes the last published one at {}", format_ts(as_of), format_ts(last))]
    StaleCycle {
        mid: String,
        as_of: Timestamp,
        last: Timestamp,
    },
    #[error("executor failure in model `{mid}`: {message}")]
    ExecutorFailure { mid: String, message: String },
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, SchedulerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub mid: String,
    pub as_of: Timestamp,
    pub inputs: InputVector,
    pub value: f64,
    /// Wall time spent assembling, executing and publishing, in seconds.
    pub latency_secs: f64,
}

/// Result of one attempted cycle.
#[derive(Debug)]
pub struct CycleOutcome {
    pub mid: String,
    pub as_of: Timestamp,
    pub result: Result<PredictionRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub cycles: u64,
    pub predictions: u64,
    pub incomplete: u64,
    pub failures: u64,
    pub stale: u64,
    /// Overdue time-scheduled boundaries dropped by the catch-up bound.
    pub catch_up_skipped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub mid: String,
    pub manifest: PmaManifest,
    pub schedule: Option<Schedule>,
    pub running: bool,
    pub next_due: Option<Timestamp>,
    pub last_as_of: Option<Timestamp>,
    pub counters: Counters,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    /// Where archives are kept and unpacked; external cycles run below it.
    pub storage_dir: PathBuf,
    pub max_catch_up: u64,
}

impl SchedulerConfig {
    pub fn new(storage_dir: impl Into<PathBuf>) -> Self {
        Self {
            storage_dir: storage_dir.into(),
            max_catch_up: 24,
        }
    }
}

enum Executor {
    Native(AnnModel),
    External(EngineRecord),
}

#[derive(Default)]
struct ModelState {
    /// Set by `set_mode`; becomes active on `start`.
    schedule: Option<Schedule>,
    /// The schedule the current/last run was started with.
    active: Option<Schedule>,
    running: bool,
    next_index: u64,
    last_as_of: Option<Timestamp>,
    counters: Counters,
    last_error: Option<String>,
}

struct ModelEntry {
    manifest: PmaManifest,
    dir: PathBuf,
    executor: Executor,
    binding: Vec<String>,
    state: Mutex<ModelState>,
    cycle: Mutex<()>,
}

pub struct Scheduler {
    broker: Arc<Broker>,
    windowing: Arc<Windowing>,
    repository: Arc<Repository>,
    clock: Arc<dyn Clock>,
    config: SchedulerConfig,
    engines: RwLock<BTreeMap<String, EngineRecord>>,
    models: RwLock<BTreeMap<String, Arc<ModelEntry>>>,
    work_seq: AtomicU64,
}

/// Window rule ids are global; a model's rules are namespaced by its mid.
pub fn scoped_rule_id(mid: &str, rule_id: &str) -> String {
    format!("{mid}/{rule_id}")
}

impl Scheduler {
    pub fn new(
        broker: Arc<Broker>,
        windowing: Arc<Windowing>,
        repository: Arc<Repository>,
        clock: Arc<dyn Clock>,
        config: SchedulerConfig,
    ) -> Result<Self> {
        std::fs::create_dir_all(config.storage_dir.join("models"))?;
        std::fs::create_dir_all(config.storage_dir.join("engines"))?;
        Ok(Self {
            broker,
            windowing,
            repository,
            clock,
            config,
            engines: RwLock::new(BTreeMap::new()),
            models: RwLock::new(BTreeMap::new()),
            work_seq: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    /// Re-registers engines and archives stored by an earlier process.
    /// Schedules are not persisted; restored models start stopped.
    pub fn restore(&self) -> Result<Vec<String>> {
        let mut engine_files: Vec<PathBuf> = std::fs::read_dir(self.config.storage_dir.join("engines"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        engine_files.sort();
        for p in engine_files {
            let rec: EngineRecord = serde_json::from_slice(&std::fs::read(&p)?)
                .map_err(|e| SchedulerError::InvalidEngine(format!("{}: {e}", p.display())))?;
            self.engines.write().insert(rec.eid.clone(), rec);
        }
        let mut archives: Vec<PathBuf> = std::fs::read_dir(self.config.storage_dir.join("models"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pma"))
            .collect();
        archives.sort();
        let mut mids = Vec::new();
        for p in archives {
            let bytes = std::fs::read(&p)?;
            match self.install(&bytes, false) {
                Ok(mid) => mids.push(mid),
                Err(e) => tracing::warn!(path = %p.display(), error = %e, "skipping stored archive"),
            }
        }
        Ok(mids)
    }

    // ---- engines ---------------------------------------------------------

    pub fn register_engine(&self, engine: EngineRecord) -> Result<String> {
        engine.validate().map_err(SchedulerError::InvalidEngine)?;
        let mut engines = self.engines.write();
        if engines.contains_key(&engine.eid) {
            return Err(SchedulerError::DuplicateEngine(engine.eid));
        }
        if engine.eid.contains(['/', '\\']) || engine.eid.starts_with('.') {
            return Err(SchedulerError::InvalidEngine(format!("invalid engine id `{}`", engine.eid)));
        }
        let path = self.config.storage_dir.join("engines").join(format!("{}.json", engine.eid));
        std::fs::write(path, serde_json::to_vec_pretty(&engine).expect("engine serializes"))?;
        let eid = engine.eid.clone();
        engines.insert(eid.clone(), engine);
        Ok(eid)
    }

    pub fn engine(&self, eid: &str) -> Option<EngineRecord> {
        self.engines.read().get(eid).cloned()
    }

    pub fn engines(&self) -> Vec<EngineRecord> {
        self.engines.read().values().cloned().collect()
    }

    pub fn delete_engine(&self, eid: &str) -> Result<()> {
        let mut engines = self.engines.write();
        if !engines.contains_key(eid) {
            return Err(SchedulerError::UnknownEngine(eid.to_string()));
        }
        if let Some(m) = self.models.read().values().find(|m| m.manifest.engine.as_deref() == Some(eid)) {
            return Err(SchedulerError::EngineInUse {
                eid: eid.to_string(),
                mid: m.manifest.mid.clone(),
            });
        }
        engines.remove(eid);
        let _ = std::fs::remove_file(self.config.storage_dir.join("engines").join(format!("{eid}.json")));
        Ok(())
    }

    // ---- models ----------------------------------------------------------

    /// Validates and installs an archive: unpacks it, creates the output
    /// stream and registers the input rules with windowing.
    pub fn register_pma(&self, archive: &[u8]) -> Result<String> {
        self.install(archive, true)
    }

    fn install(&self, bytes: &[u8], persist: bool) -> Result<String> {
        let pma = PmaArchive::from_zip(bytes).map_err(SchedulerError::BadArchive)?;
        let manifest = pma.manifest.clone();
        let mid = manifest.mid.clone();
        let executor = match manifest.executor {
            ExecutorKind::NativeAnn => Executor::Native(pma.native_model().map_err(SchedulerError::BadArchive)?),
            ExecutorKind::External => {
                let engine = match (&manifest.engine, &manifest.command_template) {
                    (Some(eid), _) => self
                        .engine(eid)
                        .ok_or_else(|| SchedulerError::UnknownEngine(eid.clone()))?,
                    (None, Some(t)) => {
                        validate_template(t).map_err(SchedulerError::BadArchive)?;
                        EngineRecord::external(format!("{mid}:inline"), t.clone())
                    }
                    (None, None) => unreachable!("manifest validation requires one of them"),
                };
                if engine.kind != ExecutorKind::External {
                    return Err(SchedulerError::BadArchive(format!(
                        "engine `{}` cannot run external models",
                        engine.eid
                    )));
                }
                Executor::External(engine)
            }
        };

        let mut models = self.models.write();
        if models.contains_key(&mid) {
            return Err(SchedulerError::DuplicateModel(mid));
        }
        // output stream: reuse an existing prediction stream, refuse any other kind
        match self.broker.topic(&manifest.output_stream) {
            Some(t) if t.kind != StreamKind::Prediction => {
                return Err(SchedulerError::BadArchive(format!(
                    "output stream `{}` exists with kind {:?}",
                    manifest.output_stream, t.kind
                )))
            }
            Some(_) => {}
            None => {
                self.broker.create_stream(&manifest.output_stream, StreamKind::Prediction)?;
            }
        }
        if self.repository.stream(&manifest.output_stream).is_none() {
            self.repository
                .create(&manifest.output_stream, StreamKind::Prediction, None, None, self.clock.now())?;
        }

        let rules: Vec<WindowRule> = manifest
            .binding()
            .into_iter()
            .map(|r| WindowRule {
                rule_id: scoped_rule_id(&mid, &r.rule_id),
                ..r.clone()
            })
            .collect();
        let binding = self.windowing.register_rules(rules)?;

        let dir = self.config.storage_dir.join("models").join(&mid);
        let unpack = || -> std::io::Result<()> {
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            pma.unpack_to(&dir)?;
            if persist {
                std::fs::write(self.config.storage_dir.join("models").join(format!("{mid}.pma")), bytes)?;
            }
            Ok(())
        };
        if let Err(e) = unpack() {
            for id in &binding {
                let _ = self.windowing.remove_rule(id);
            }
            return Err(e.into());
        }
        models.insert(
            mid.clone(),
            Arc::new(ModelEntry {
                manifest,
                dir,
                executor,
                binding,
                state: Mutex::new(ModelState::default()),
                cycle: Mutex::new(()),
            }),
        );
        tracing::info!(mid = %mid, "model registered");
        Ok(mid)
    }

    fn entry(&self, mid: &str) -> Result<Arc<ModelEntry>> {
        self.models
            .read()
            .get(mid)
            .cloned()
            .ok_or_else(|| SchedulerError::UnknownModel(mid.to_string()))
    }

    pub fn model(&self, mid: &str) -> Result<ModelInfo> {
        let e = self.entry(mid)?;
        let st = e.state.lock();
        let next_due = match (&st.active, st.running) {
            (Some(s), true) => s.boundary(st.next_index),
            _ => None,
        };
        Ok(ModelInfo {
            mid: mid.to_string(),
            manifest: e.manifest.clone(),
            schedule: st.schedule.clone(),
            running: st.running,
            next_due,
            last_as_of: st.last_as_of,
            counters: st.counters.clone(),
            last_error: st.last_error.clone(),
        })
    }

    pub fn models(&self) -> Vec<String> {
        self.models.read().keys().cloned().collect()
    }

    pub fn counters(&self, mid: &str) -> Result<Counters> {
        Ok(self.entry(mid)?.state.lock().counters.clone())
    }

    /// Removes a model and its input rules. Its output stream and stored
    /// predictions stay.
    pub fn delete_model(&self, mid: &str) -> Result<()> {
        let entry = self
            .models
            .write()
            .remove(mid)
            .ok_or_else(|| SchedulerError::UnknownModel(mid.to_string()))?;
        // wait for an in-flight cycle
        let _guard = entry.cycle.lock();
        entry.state.lock().running = false;
        for id in &entry.binding {
            let _ = self.windowing.remove_rule(id);
        }
        let _ = std::fs::remove_dir_all(&entry.dir);
        let _ = std::fs::remove_file(self.config.storage_dir.join("models").join(format!("{mid}.pma")));
        Ok(())
    }

    // ---- modes -----------------------------------------------------------

    pub fn set_mode(&self, mid: &str, schedule: Schedule) -> Result<()> {
        let entry = self.entry(mid)?;
        schedule.validate().map_err(SchedulerError::InvalidSchedule)?;
        match &schedule {
            Schedule::DataDriven { trigger_streams } => {
                for s in trigger_streams {
                    if self.broker.topic(s).is_none() {
                        return Err(SchedulerError::InvalidSchedule(format!("unknown trigger stream `{s}`")));
                    }
                    if *s == entry.manifest.output_stream {
                        return Err(SchedulerError::InvalidSchedule(
                            "a model cannot be triggered by its own output".into(),
                        ));
                    }
                }
            }
            Schedule::OnDemand | Schedule::TimeScheduled { .. } | Schedule::EventDriven { .. } => {}
        }
        let mut st = entry.state.lock();
        if st.running {
            return Err(SchedulerError::AlreadyRunning(mid.to_string()));
        }
        st.schedule = Some(schedule);
        Ok(())
    }

    /// Activates the pending schedule. Restarting with an unchanged
    /// time schedule resumes at the first boundary not yet fired.
    pub fn start(&self, mid: &str) -> Result<()> {
        let entry = self.entry(mid)?;
        let mut st = entry.state.lock();
        if st.running {
            return Err(SchedulerError::AlreadyRunning(mid.to_string()));
        }
        let schedule = st
            .schedule
            .clone()
            .ok_or_else(|| SchedulerError::InvalidSchedule(format!("no mode set for `{mid}`")))?;
        if st.active.as_ref() != Some(&schedule) {
            st.next_index = 0;
        }
        if schedule.exhausted(st.next_index) {
            return Err(SchedulerError::InvalidSchedule("schedule already completed; set a new mode".into()));
        }
        st.active = Some(schedule);
        st.running = true;
        Ok(())
    }

    pub fn stop(&self, mid: &str) -> Result<()> {
        let entry = self.entry(mid)?;
        let mut st = entry.state.lock();
        if !st.running {
            return Err(SchedulerError::NotRunning(mid.to_string()));
        }
        st.running = false;
        Ok(())
    }

    pub fn is_running(&self, mid: &str) -> Result<bool> {
        Ok(self.entry(mid)?.state.lock().running)
    }

    // ---- cycles ----------------------------------------------------------

    /// One explicit cycle at `as_of`, regardless of mode.
    pub fn run_once(&self, mid: &str, as_of: Timestamp) -> Result<PredictionRecord> {
        let entry = self.entry(mid)?;
        self.cycle(&entry, as_of)
    }

    fn cycle(&self, entry: &ModelEntry, as_of: Timestamp) -> Result<PredictionRecord> {
        let _serial = entry.cycle.lock();
        let started = Instant::now();
        let mid = &entry.manifest.mid;
        let last = {
            let mut st = entry.state.lock();
            st.counters.cycles += 1;
            st.last_as_of
        };
        let result = self.cycle_inner(entry, as_of, last, started);
        let mut st = entry.state.lock();
        match &result {
            Ok(rec) => {
                st.counters.predictions += 1;
                st.last_as_of = Some(rec.as_of);
            }
            Err(e) => {
                match e {
                    SchedulerError::IncompleteInputs { .. } => st.counters.incomplete += 1,
                    SchedulerError::StaleCycle { .. } => st.counters.stale += 1,
                    _ => st.counters.failures += 1,
                }
                tracing::debug!(mid = %mid, error = %e, "cycle skipped");
                st.last_error = Some(e.to_string());
            }
        }
        result
    }

    fn cycle_inner(
        &self,
        entry: &ModelEntry,
        as_of: Timestamp,
        last: Option<Timestamp>,
        started: Instant,
    ) -> Result<PredictionRecord> {
        let mid = &entry.manifest.mid;
        if let Some(last) = last.filter(|l| *l > as_of) {
            return Err(SchedulerError::StaleCycle {
                mid: mid.clone(),
                as_of,
                last,
            });
        }
        let inputs = self.windowing.assemble_input_vector(&entry.binding, as_of)?;
        if !inputs.is_complete() {
            let missing = (0..inputs.arity()).filter(|&i| !inputs.completeness[i]).collect();
            return Err(SchedulerError::IncompleteInputs {
                mid: mid.clone(),
                as_of,
                missing,
            });
        }
        let failure = |message: String| SchedulerError::ExecutorFailure {
            mid: mid.clone(),
            message,
        };
        let value = match &entry.executor {
            Executor::Native(model) => model.predict(&inputs.values).map_err(|e| failure(e.to_string()))?,
            Executor::External(engine) => {
                let seq = self.work_seq.fetch_add(1, Ordering::Relaxed);
                let workdir = self.config.storage_dir.join("work").join(format!("{mid}-{seq}"));
                let out = execute_external(engine, &entry.dir, &inputs.values, &workdir);
                let _ = std::fs::remove_dir_all(&workdir);
                out.map_err(|e| failure(e.to_string()))?
            }
        };
        if !value.is_finite() {
            return Err(failure(format!("non-finite prediction {value}")));
        }
        let point = DataPoint::new(entry.manifest.output_stream.clone(), as_of, value);
        self.broker.publish_as(Writer::Scheduler, point.clone())?;
        self.repository.append(&point.stream_id, std::slice::from_ref(&point))?;
        Ok(PredictionRecord {
            mid: mid.clone(),
            as_of,
            inputs,
            value,
            latency_secs: started.elapsed().as_secs_f64(),
        })
    }

    fn outcome(&self, entry: &ModelEntry, as_of: Timestamp) -> CycleOutcome {
        CycleOutcome {
            mid: entry.manifest.mid.clone(),
            as_of,
            result: self.cycle(entry, as_of),
        }
    }

    fn running_entries(&self) -> Vec<Arc<ModelEntry>> {
        self.models
            .read()
            .values()
            .filter(|e| e.state.lock().running)
            .cloned()
            .collect()
    }

    /// Fires every due time-scheduled boundary `<= now`, in order per model.
    pub fn tick(&self, now: Timestamp) -> Vec<CycleOutcome> {
        let mut out = Vec::new();
        for entry in self.running_entries() {
            let due: Vec<Timestamp> = {
                let mut st = entry.state.lock();
                let Some(schedule @ Schedule::TimeScheduled { .. }) = st.active.clone() else {
                    continue;
                };
                if !st.running {
                    continue;
                }
                let (from, to) = schedule.due_range(st.next_index, now);
                let first = from.max(to.saturating_sub(self.config.max_catch_up));
                if first > from {
                    tracing::warn!(mid = %entry.manifest.mid, skipped = first - from, "catch-up bound reached");
                    st.counters.catch_up_skipped += first - from;
                }
                st.next_index = to;
                if schedule.exhausted(to) {
                    st.running = false;
                }
                (first..to).filter_map(|k| schedule.boundary(k)).collect()
            };
            for b in due {
                out.push(self.outcome(&entry, b));
            }
        }
        out
    }

    /// [`Scheduler::tick`] at the scheduler's clock.
    pub fn tick_now(&self) -> Vec<CycleOutcome> {
        self.tick(self.clock.now())
    }

    /// One cycle at the point's timestamp for each running data-driven model
    /// that lists the point's stream as a trigger.
    pub fn on_data(&self, point: &DataPoint) -> Vec<CycleOutcome> {
        self.running_entries()
            .into_iter()
            .filter(|e| {
                matches!(&e.state.lock().active,
                    Some(Schedule::DataDriven { trigger_streams }) if trigger_streams.contains(&point.stream_id))
            })
            .map(|e| self.outcome(&e, point.timestamp))
            .collect()
    }

    /// One cycle at the event's trigger time for each running event-driven
    /// model bound to the event's rule.
    pub fn on_event(&self, event: &NotificationEvent) -> Vec<CycleOutcome> {
        self.running_entries()
            .into_iter()
            .filter(|e| {
                matches!(&e.state.lock().active,
                    Some(Schedule::EventDriven { trigger_rule }) if *trigger_rule == event.rule_id)
            })
            .map(|e| self.outcome(&e, event.triggered_at))
            .collect()
    }

    pub fn model_dir(&self, mid: &str) -> Result<PathBuf> {
        Ok(self.entry(mid)?.dir.clone())
    }

    pub fn storage_dir(&self) -> &Path {
        &self.config.storage_dir
    }
}
