//! In-process publish/subscribe broker for logical data streams.
//!
//! Every stream is an ordered log with monotone offsets. Subscribers attach
//! either at the current head or at an explicit offset and receive each later
//! point exactly once, in order, through a bounded buffer. A subscriber whose
//! buffer fills up is disconnected with [`SubscriptionError::Overflow`]
//! instead of stalling publishers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TryRecvError, TrySendError};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::types::{parse_ts, DataPoint, Timestamp};

pub const DEFAULT_HIGH_WATER_MARK: usize = 65_536;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrokerError {
    #[error("stream `{0}` already exists")]
    DuplicateStream(String),
    #[error("invalid stream id `{0}`: must be non-empty without whitespace")]
    InvalidId(String),
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("non-finite value on stream `{0}`")]
    NonFiniteValue(String),
    #[error("stream `{stream}` of kind {kind:?} cannot be written by {writer:?}")]
    WrongWriter {
        stream: String,
        kind: StreamKind,
        writer: Writer,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Sensor,
    Derived,
    Prediction,
    Notification,
}

/// Who is publishing. Sensor streams accept only ingestion, prediction streams
/// only the scheduler, notification streams only the notifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Writer {
    Ingest,
    Scheduler,
    Notifier,
    Internal,
}

impl StreamKind {
    fn accepts(self, writer: Writer) -> bool {
        match self {
            StreamKind::Sensor => writer == Writer::Ingest,
            StreamKind::Prediction => writer == Writer::Scheduler,
            StreamKind::Notification => writer == Writer::Notifier,
            StreamKind::Derived => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamTopic {
    pub stream_id: String,
    pub created_at: Timestamp,
    pub kind: StreamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backlog {
    FromNow,
    FromOffset(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub offset: u64,
    pub point: DataPoint,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubscriptionError {
    #[error("subscriber fell more than {0} points behind and was disconnected")]
    Overflow(usize),
    #[error("stream was closed")]
    Closed,
}

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub high_water_mark: usize,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            high_water_mark: DEFAULT_HIGH_WATER_MARK,
        }
    }
}

struct Slot {
    tx: Sender<Delivery>,
    start_offset: u64,
    overflowed: Arc<AtomicBool>,
}

struct TopicState {
    log: Vec<DataPoint>,
    slots: Vec<Slot>,
}

struct Topic {
    info: StreamTopic,
    state: Mutex<TopicState>,
}

pub struct Broker {
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    config: BrokerConfig,
    clock: Arc<dyn Clock>,
    deliveries: AtomicU64,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new(BrokerConfig::default(), Arc::new(SystemClock))
    }
}

pub fn validate_stream_id(id: &str) -> Result<(), BrokerError> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(BrokerError::InvalidId(id.to_string()));
    }
    Ok(())
}

impl Broker {
    pub fn new(config: BrokerConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            topics: RwLock::new(HashMap::new()),
            config,
            clock,
            deliveries: AtomicU64::new(0),
        }
    }

    pub fn create_stream(&self, stream_id: &str, kind: StreamKind) -> Result<StreamTopic, BrokerError> {
        validate_stream_id(stream_id)?;
        let mut topics = self.topics.write();
        if topics.contains_key(stream_id) {
            return Err(BrokerError::DuplicateStream(stream_id.to_string()));
        }
        let info = StreamTopic {
            stream_id: stream_id.to_string(),
            created_at: self.clock.now(),
            kind,
        };
        topics.insert(
            stream_id.to_string(),
            Arc::new(Topic {
                info: info.clone(),
                state: Mutex::new(TopicState {
                    log: Vec::new(),
                    slots: Vec::new(),
                }),
            }),
        );
        Ok(info)
    }

    /// Removes the topic; its subscribers observe [`SubscriptionError::Closed`]
    /// once they drain what was already delivered.
    pub fn delete_stream(&self, stream_id: &str) -> Result<(), BrokerError> {
        self.topics
            .write()
            .remove(stream_id)
            .map(|_| ())
            .ok_or_else(|| BrokerError::UnknownStream(stream_id.to_string()))
    }

    pub fn list_streams(&self) -> Vec<StreamTopic> {
        let mut v: Vec<_> = self.topics.read().values().map(|t| t.info.clone()).collect();
        v.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
        v
    }

    pub fn topic(&self, stream_id: &str) -> Option<StreamTopic> {
        self.topics.read().get(stream_id).map(|t| t.info.clone())
    }

    fn get(&self, stream_id: &str) -> Result<Arc<Topic>, BrokerError> {
        self.topics
            .read()
            .get(stream_id)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownStream(stream_id.to_string()))
    }

    /// Publishes as an ingestion source.
    pub fn publish(&self, point: DataPoint) -> Result<u64, BrokerError> {
        self.publish_as(Writer::Ingest, point)
    }

    /// Appends `point` at the next offset of its stream and fans it out.
    pub fn publish_as(&self, writer: Writer, point: DataPoint) -> Result<u64, BrokerError> {
        let topic = self.get(&point.stream_id)?;
        if !point.value.is_finite() {
            return Err(BrokerError::NonFiniteValue(point.stream_id));
        }
        if !topic.info.kind.accepts(writer) {
            return Err(BrokerError::WrongWriter {
                stream: point.stream_id,
                kind: topic.info.kind,
                writer,
            });
        }
        let hwm = self.config.high_water_mark;
        let mut st = topic.state.lock();
        let offset = st.log.len() as u64;
        st.log.push(point.clone());
        let mut delivered = 0u64;
        st.slots.retain(|slot| {
            if offset < slot.start_offset {
                return true;
            }
            match slot.tx.try_send(Delivery {
                offset,
                point: point.clone(),
            }) {
                Ok(()) => {
                    delivered += 1;
                    true
                }
                Err(TrySendError::Full(_)) => {
                    tracing::warn!(stream = %topic.info.stream_id, hwm, "subscriber overflow, disconnecting");
                    slot.overflowed.store(true, Ordering::SeqCst);
                    false
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
        drop(st);
        self.deliveries.fetch_add(delivered, Ordering::Relaxed);
        Ok(offset)
    }

    pub fn subscribe(&self, stream_id: &str, backlog: Backlog) -> Result<Subscription, BrokerError> {
        let topic = self.get(stream_id)?;
        let overflowed = Arc::new(AtomicBool::new(false));
        let mut st = topic.state.lock();
        let head = st.log.len() as u64;
        let start_offset = match backlog {
            Backlog::FromNow => head,
            Backlog::FromOffset(n) => n,
        };
        let replay = st.log.len().saturating_sub(start_offset as usize);
        let (tx, rx) = bounded(self.config.high_water_mark + replay);
        for (i, p) in st.log.iter().enumerate().skip(start_offset as usize) {
            tx.try_send(Delivery {
                offset: i as u64,
                point: p.clone(),
            })
            .expect("replay fits the buffer");
        }
        st.slots.push(Slot {
            tx,
            start_offset,
            overflowed: overflowed.clone(),
        });
        Ok(Subscription {
            stream_id: stream_id.to_string(),
            start_offset,
            rx,
            overflowed,
            high_water_mark: self.config.high_water_mark,
        })
    }

    /// Number of points currently retained for `stream_id`.
    pub fn len(&self, stream_id: &str) -> Result<u64, BrokerError> {
        Ok(self.get(stream_id)?.state.lock().log.len() as u64)
    }

    pub fn total_deliveries(&self) -> u64 {
        self.deliveries.load(Ordering::Relaxed)
    }

    /// Parses one wire record and publishes it as ingestion.
    pub fn ingest_line(&self, line: &[u8]) -> Result<DataPoint, IngestError> {
        let p = parse_line(line)?;
        self.publish(p.clone())?;
        Ok(p)
    }
}

/// Receiving end of a subscription. Can be moved to another thread.
pub struct Subscription {
    pub stream_id: String,
    pub start_offset: u64,
    rx: Receiver<Delivery>,
    overflowed: Arc<AtomicBool>,
    high_water_mark: usize,
}

impl Subscription {
    fn disconnected(&self) -> SubscriptionError {
        if self.overflowed.load(Ordering::SeqCst) {
            SubscriptionError::Overflow(self.high_water_mark)
        } else {
            SubscriptionError::Closed
        }
    }

    /// Returns the next delivery if one is buffered.
    pub fn try_recv(&self) -> Result<Option<Delivery>, SubscriptionError> {
        match self.rx.try_recv() {
            Ok(d) => Ok(Some(d)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(self.disconnected()),
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Delivery>, SubscriptionError> {
        match self.rx.recv_timeout(timeout) {
            Ok(d) => Ok(Some(d)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(self.disconnected()),
        }
    }

    pub fn recv(&self) -> Result<Delivery, SubscriptionError> {
        self.rx.recv().map_err(|_| self.disconnected())
    }

    /// Everything buffered right now.
    pub fn drain(&self) -> Result<Vec<Delivery>, SubscriptionError> {
        let mut out = Vec::new();
        while let Some(d) = self.try_recv()? {
            out.push(d);
        }
        Ok(out)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    sid: String,
    ts: String,
    v: WireValue,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireValue {
    Num(f64),
    Text(String),
}

/// Parses one `{"sid":..,"ts":..,"v":..}` record. `v` may be a JSON number or
/// a numeric string (so `"NaN"`/`"Infinity"` parse and are then rejected as
/// non-finite).
pub fn parse_line(line: &[u8]) -> Result<DataPoint, IngestError> {
    let rec: WireRecord = serde_json::from_slice(line).map_err(|e| IngestError::Parse(e.to_string()))?;
    validate_stream_id(&rec.sid)?;
    let timestamp = parse_ts(&rec.ts).map_err(|e| IngestError::Parse(format!("ts `{}`: {e}", rec.ts)))?;
    let value = match rec.v {
        WireValue::Num(v) => v,
        WireValue::Text(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| IngestError::Parse(format!("v `{s}` is not a number")))?,
    };
    if !value.is_finite() {
        return Err(BrokerError::NonFiniteValue(rec.sid).into());
    }
    Ok(DataPoint {
        stream_id: rec.sid,
        timestamp,
        value,
    })
}

/// Renders a point in the wire format accepted by [`parse_line`].
pub fn format_line(p: &DataPoint) -> String {
    serde_json::json!({
        "sid": p.stream_id,
        "ts": crate::types::format_ts(&p.timestamp),
        "v": p.value,
    })
    .to_string()
}
