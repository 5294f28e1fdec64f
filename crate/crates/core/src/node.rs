//! One processing node: broker, repository, windowing, scheduler and
//! notification engine wired into a single dispatch path.
//!
//! Every accepted point goes through the same steps, in order: broker
//! publish, repository append, window update, data-driven cycles,
//! notification rules. Predictions and notification events produced along
//! the way are dispatched the same way, so models can be chained and
//! prediction streams can carry notification rules. Dispatch is serialized
//! node-wide, which keeps the whole pipeline deterministic for a given input
//! order.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;

use crate::clock::Clock;
use crate::notification::{NotificationEngine, NotificationError, NotificationEvent, NotificationRule};
use crate::repository::{Repository, RepositoryError};
use crate::scheduler::{CycleOutcome, Scheduler, SchedulerConfig, SchedulerError};
use crate::stream_core::{Broker, BrokerConfig, BrokerError, StreamKind, StreamTopic, Writer};
use crate::types::{DataPoint, Timestamp};
use crate::windowing::{WindowConfig, WindowError, WindowRule, Windowing};

/// Stream that receives one point per notification event.
pub const NOTIFICATIONS_STREAM: &str = "notifications";

/// Chained dispatch (prediction feeding a data-driven model feeding ...)
/// stops after this many hops.
const MAX_CHAIN_DEPTH: usize = 8;

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Notification(#[from] NotificationError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Ingest(#[from] crate::stream_core::IngestError),
    #[error("stream `{stream}` is in use by {user}")]
    StreamInUse { stream: String, user: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    /// Root for the repository and model storage; `None` keeps values in
    /// memory and models in a temporary directory.
    pub data_dir: Option<PathBuf>,
    pub broker: BrokerConfig,
    pub window: WindowConfig,
    pub max_catch_up: u64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            broker: BrokerConfig::default(),
            window: WindowConfig::default(),
            max_catch_up: 24,
        }
    }
}

/// What one dispatch produced.
#[derive(Debug, Default)]
pub struct DispatchReport {
    pub aggregates: usize,
    pub cycles: Vec<CycleOutcome>,
    pub events: Vec<NotificationEvent>,
}

impl DispatchReport {
    /// Appends another report's outcomes to this one.
    pub fn absorb(&mut self, other: DispatchReport) {
        self.aggregates += other.aggregates;
        self.cycles.extend(other.cycles);
        self.events.extend(other.events);
    }

    pub fn predictions(&self) -> impl Iterator<Item = &crate::scheduler::PredictionRecord> {
        self.cycles.iter().filter_map(|c| c.result.as_ref().ok())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamSummary {
    pub stream_id: String,
    pub kind: StreamKind,
    pub created_at: Timestamp,
    pub sensor_id: Option<String>,
    pub variable_id: Option<String>,
    pub closed: bool,
    pub count: usize,
}

pub struct Node {
    clock: Arc<dyn Clock>,
    broker: Arc<Broker>,
    repository: Arc<Repository>,
    windowing: Arc<Windowing>,
    notifications: NotificationEngine,
    scheduler: Scheduler,
    events: RwLock<Vec<NotificationEvent>>,
    dispatch: Mutex<()>,
    _scratch: Option<tempfile::TempDir>,
}

impl Node {
    pub fn open(config: NodeConfig, clock: Arc<dyn Clock>) -> Result<Self, NodeError> {
        let broker = Arc::new(Broker::new(config.broker.clone(), clock.clone()));
        let (repository, storage, scratch) = match &config.data_dir {
            Some(dir) => (
                Repository::open(dir.join("repository"))?,
                dir.join("models"),
                None,
            ),
            None => {
                let tmp = tempfile::Builder::new().prefix("wtstream-").tempdir()?;
                let storage = tmp.path().to_path_buf();
                (Repository::in_memory(), storage, Some(tmp))
            }
        };
        let repository = Arc::new(repository);
        for rec in repository.streams() {
            broker.create_stream(&rec.stream_id, rec.kind)?;
        }
        if broker.topic(NOTIFICATIONS_STREAM).is_none() {
            broker.create_stream(NOTIFICATIONS_STREAM, StreamKind::Notification)?;
            repository.create(NOTIFICATIONS_STREAM, StreamKind::Notification, None, None, clock.now())?;
        }
        let windowing = Arc::new(Windowing::new(broker.clone(), config.window));
        let mut sched_config = SchedulerConfig::new(storage);
        sched_config.max_catch_up = config.max_catch_up;
        let scheduler = Scheduler::new(
            broker.clone(),
            windowing.clone(),
            repository.clone(),
            clock.clone(),
            sched_config,
        )?;
        let restored = scheduler.restore()?;
        if !restored.is_empty() {
            tracing::info!(models = ?restored, "restored models");
        }
        Ok(Self {
            notifications: NotificationEngine::new(broker.clone()),
            clock,
            broker,
            repository,
            windowing,
            scheduler,
            events: RwLock::new(Vec::new()),
            dispatch: Mutex::new(()),
            _scratch: scratch,
        })
    }

    /// An in-memory node.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Result<Self, NodeError> {
        Self::open(NodeConfig::default(), clock)
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repository
    }

    pub fn windowing(&self) -> &Arc<Windowing> {
        &self.windowing
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn notifications(&self) -> &NotificationEngine {
        &self.notifications
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.repository.data_dir().and_then(Path::parent)
    }

    // ---- streams ---------------------------------------------------------

    /// Creates a stream on the broker and in the repository.
    pub fn create_stream(
        &self,
        stream_id: &str,
        kind: StreamKind,
        sensor_id: Option<&str>,
        variable_id: Option<&str>,
    ) -> Result<StreamTopic, NodeError> {
        let topic = self.broker.create_stream(stream_id, kind)?;
        if let Err(e) = self
            .repository
            .create(stream_id, kind, sensor_id, variable_id, topic.created_at)
        {
            let _ = self.broker.delete_stream(stream_id);
            return Err(e.into());
        }
        Ok(topic)
    }

    pub fn stream(&self, stream_id: &str) -> Result<StreamSummary, NodeError> {
        let rec = self
            .repository
            .stream(stream_id)
            .ok_or_else(|| RepositoryError::UnknownStream(stream_id.to_string()))?;
        Ok(StreamSummary {
            count: self.repository.count(stream_id)?,
            stream_id: rec.stream_id,
            kind: rec.kind,
            created_at: rec.created_at,
            sensor_id: rec.sensor_id,
            variable_id: rec.variable_id,
            closed: rec.closed,
        })
    }

    pub fn streams(&self) -> Vec<StreamSummary> {
        self.repository
            .streams()
            .into_iter()
            .filter_map(|r| self.stream(&r.stream_id).ok())
            .collect()
    }

    /// Deletes a stream that no rule or model refers to.
    pub fn delete_stream(&self, stream_id: &str) -> Result<(), NodeError> {
        let in_use = |user: String| NodeError::StreamInUse {
            stream: stream_id.to_string(),
            user,
        };
        if stream_id == NOTIFICATIONS_STREAM {
            return Err(in_use("the notifier".into()));
        }
        if let Some(r) = self.windowing.rules().iter().find(|r| r.source_stream == stream_id) {
            return Err(in_use(format!("window rule `{}`", r.rule_id)));
        }
        if let Some(r) = self.notifications.rules().iter().find(|r| r.source_stream == stream_id) {
            return Err(in_use(format!("notification rule `{}`", r.rule_id)));
        }
        for mid in self.scheduler.models() {
            if let Ok(info) = self.scheduler.model(&mid) {
                if info.manifest.output_stream == stream_id {
                    return Err(in_use(format!("model `{mid}`")));
                }
            }
        }
        self.repository.delete(stream_id)?;
        match self.broker.delete_stream(stream_id) {
            Ok(()) | Err(BrokerError::UnknownStream(_)) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    // ---- rules -----------------------------------------------------------

    pub fn register_window_rule(&self, rule: WindowRule) -> Result<String, NodeError> {
        Ok(self.windowing.register_rule(rule)?)
    }

    pub fn register_notification_rule(&self, rule: NotificationRule) -> Result<String, NodeError> {
        Ok(self.notifications.register_rule(rule)?)
    }

    /// Every notification event so far, oldest first.
    pub fn events(&self) -> Vec<NotificationEvent> {
        self.events.read().clone()
    }

    // ---- data path -------------------------------------------------------

    /// Accepts one sensor point and runs it through the pipeline.
    pub fn ingest(&self, point: DataPoint) -> Result<DispatchReport, NodeError> {
        let _serial = self.dispatch.lock();
        self.broker.publish_as(Writer::Ingest, point.clone())?;
        self.repository.append(&point.stream_id, std::slice::from_ref(&point))?;
        Ok(self.dispatch(&point, 0))
    }

    /// Parses and ingests one JSON line (`{"sid":..,"ts":..,"v":..}`).
    pub fn ingest_line(&self, line: &[u8]) -> Result<DispatchReport, NodeError> {
        self.ingest(crate::stream_core::parse_line(line)?)
    }

    /// Tells the node that all points up to `now` have arrived: releases
    /// snapshot windows and fires due time-scheduled cycles.
    pub fn advance_to(&self, now: Timestamp) -> DispatchReport {
        let _serial = self.dispatch.lock();
        let mut report = DispatchReport {
            aggregates: self.windowing.advance_to(now).len(),
            ..Default::default()
        };
        let cycles = self.scheduler.tick(now);
        report.absorb(self.follow_cycles(cycles, 0));
        report
    }

    /// [`Node::advance_to`] at the node clock.
    pub fn tick(&self) -> DispatchReport {
        self.advance_to(self.clock.now())
    }

    /// Runs one on-demand cycle and dispatches its prediction.
    pub fn run_once(&self, mid: &str, as_of: Timestamp) -> Result<DispatchReport, NodeError> {
        let _serial = self.dispatch.lock();
        let outcome = CycleOutcome {
            mid: mid.to_string(),
            as_of,
            result: Ok(self.scheduler.run_once(mid, as_of)?),
        };
        Ok(self.follow_cycles(vec![outcome], 0))
    }

    fn dispatch(&self, point: &DataPoint, depth: usize) -> DispatchReport {
        let mut report = DispatchReport {
            aggregates: self.windowing.on_point(point).len(),
            ..Default::default()
        };
        if depth >= MAX_CHAIN_DEPTH {
            tracing::warn!(stream = %point.stream_id, "dispatch chain too deep, stopping");
            return report;
        }
        let cycles = self.scheduler.on_data(point);
        report.absorb(self.follow_cycles(cycles, depth));

        for event in self.notifications.evaluate(point) {
            report.absorb(self.record_event(event, depth));
        }
        report
    }

    fn record_event(&self, event: NotificationEvent, depth: usize) -> DispatchReport {
        let value = *event.values.last().expect("events carry at least one value");
        let point = DataPoint::new(NOTIFICATIONS_STREAM, event.triggered_at, value);
        if let Err(e) = self.broker.publish_as(Writer::Notifier, point.clone()) {
            tracing::error!(error = %e, "publishing notification");
        } else if let Err(e) = self.repository.append(NOTIFICATIONS_STREAM, &[point]) {
            tracing::error!(error = %e, "storing notification");
        }
        tracing::info!(rule = %event.rule_id, message = %event.message, "notification");
        self.events.write().push(event.clone());
        let cycles = self.scheduler.on_event(&event);
        let mut report = self.follow_cycles(cycles, depth);
        report.events.insert(0, event);
        report
    }

    fn follow_cycles(&self, cycles: Vec<CycleOutcome>, depth: usize) -> DispatchReport {
        let mut report = DispatchReport::default();
        for c in cycles {
            if let Ok(rec) = &c.result {
                let out = self
                    .scheduler
                    .model(&rec.mid)
                    .map(|m| m.manifest.output_stream)
                    .unwrap_or_default();
                let p = DataPoint::new(out, rec.as_of, rec.value);
                let downstream = self.dispatch(&p, depth + 1);
                report.cycles.push(c);
                report.absorb(downstream);
            } else {
                report.cycles.push(c);
            }
        }
        report
    }
}
