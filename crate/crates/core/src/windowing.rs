//! Sliding time windows over raw streams and the aggregate rules that turn
//! them into model inputs.
//!
//! A rule aggregates the points of one source stream whose timestamps fall in
//! the half-open interval `(as_of - lag - window, as_of - lag]`. Per-point
//! rules are evaluated at the timestamp of every accepted point; snapshot
//! rules at epoch-aligned boundaries of their interval, once the stream (or
//! the clock, via [`Windowing::advance_to`]) has moved past the boundary.
//!
//! Points may arrive out of order by up to `lateness` behind the newest
//! timestamp seen on their stream; anything later is dropped and counted.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use chrono::Duration;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_core::Broker;
use crate::types::{DataPoint, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("rule `{0}` already registered")]
    DuplicateRule(String),
    #[error("input index {0} used twice in one binding")]
    DuplicateIndex(usize),
    #[error("bad window: {0}")]
    BadWindow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Avg,
    Sum,
    Min,
    Max,
    Count,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    #[default]
    PerPoint,
    Snapshot { interval_secs: i64 },
}

/// Declarative input rule. Durations are whole seconds in the JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRule {
    pub rule_id: String,
    pub source_stream: String,
    pub aggregate: Aggregate,
    pub window_secs: i64,
    #[serde(default)]
    pub lag_secs: i64,
    #[serde(default)]
    pub cadence: Cadence,
    #[serde(default)]
    pub input_index: usize,
}

impl WindowRule {
    pub fn window(&self) -> Duration {
        Duration::seconds(self.window_secs)
    }

    pub fn lag(&self) -> Duration {
        Duration::seconds(self.lag_secs)
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        if self.rule_id.trim().is_empty() {
            return Err(WindowError::BadWindow("empty rule id".into()));
        }
        if self.window_secs <= 0 {
            return Err(WindowError::BadWindow(format!("window must be positive, got {}s", self.window_secs)));
        }
        if self.lag_secs < 0 {
            return Err(WindowError::BadWindow(format!("lag must be non-negative, got {}s", self.lag_secs)));
        }
        if let Cadence::Snapshot { interval_secs } = self.cadence {
            if interval_secs <= 0 {
                return Err(WindowError::BadWindow(format!(
                    "snapshot interval must be positive, got {interval_secs}s"
                )));
            }
        }
        Ok(())
    }

    /// `(lo, hi]` bounds for an evaluation at `as_of`.
    pub fn bounds(&self, as_of: Timestamp) -> (Timestamp, Timestamp) {
        let hi = as_of - self.lag();
        (hi - self.window(), hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateValue {
    pub rule_id: String,
    pub as_of: Timestamp,
    /// `None` when the window held no points.
    pub value: Option<f64>,
    pub sample_count: usize,
}

impl AggregateValue {
    pub fn is_complete(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVector {
    pub as_of: Timestamp,
    /// Slot `i` holds the rule with input index `i`; empty slots are NaN.
    pub values: Vec<f64>,
    pub completeness: Vec<bool>,
}

impl InputVector {
    pub fn is_complete(&self) -> bool {
        self.completeness.iter().all(|&c| c)
    }

    pub fn arity(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    /// How far behind the newest timestamp of a stream a point may arrive.
    pub lateness: Duration,
    /// Extra history kept beyond the widest rule span, so evaluations at
    /// older instants (scheduler catch-up) still see their points.
    pub retention: Duration,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lateness: Duration::minutes(5),
            retention: Duration::hours(25),
        }
    }
}

/// Pure aggregate over an iterator of values; `None` for an empty input.
pub fn aggregate<I: IntoIterator<Item = f64>>(agg: Aggregate, values: I) -> (Option<f64>, usize) {
    let mut n = 0usize;
    let mut acc = 0.0;
    let mut last = f64::NAN;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        n += 1;
        acc += v;
        last = v;
        min = min.min(v);
        max = max.max(v);
    }
    if n == 0 {
        return (None, 0);
    }
    let value = match agg {
        Aggregate::Avg => acc / n as f64,
        Aggregate::Sum => acc,
        Aggregate::Min => min,
        Aggregate::Max => max,
        Aggregate::Count => n as f64,
        Aggregate::Last => last,
    };
    (Some(value), n)
}

struct RuleState {
    rule: WindowRule,
    latest: Option<AggregateValue>,
    next_boundary: Option<Timestamp>,
}

#[derive(Default)]
struct StreamBuffer {
    /// Sorted by timestamp; equal timestamps keep arrival order.
    points: VecDeque<(Timestamp, f64)>,
    watermark: Option<Timestamp>,
    late_dropped: u64,
}

impl StreamBuffer {
    fn evaluate(&self, rule: &WindowRule, as_of: Timestamp) -> AggregateValue {
        let (lo, hi) = rule.bounds(as_of);
        let start = self.points.partition_point(|(t, _)| *t <= lo);
        let end = self.points.partition_point(|(t, _)| *t <= hi);
        let (value, sample_count) = aggregate(rule.aggregate, self.points.range(start..end.max(start)).map(|p| p.1));
        AggregateValue {
            rule_id: rule.rule_id.clone(),
            as_of,
            value,
            sample_count,
        }
    }
}

#[derive(Default)]
struct Inner {
    rules: BTreeMap<String, RuleState>,
    buffers: HashMap<String, StreamBuffer>,
}

impl Inner {
    fn horizon(&self, stream: &str, cfg: &WindowConfig) -> Duration {
        let span = self
            .rules
            .values()
            .filter(|r| r.rule.source_stream == stream)
            .map(|r| r.rule.window() + r.rule.lag())
            .max()
            .unwrap_or_else(Duration::zero);
        span + cfg.lateness + cfg.retention
    }

    fn emit_snapshots(&mut self, stream: &str, strictly_before: Option<Timestamp>, up_to: Option<Timestamp>) -> Vec<AggregateValue> {
        let mut out = Vec::new();
        let Some(buf) = self.buffers.get(stream) else {
            return out;
        };
        for state in self.rules.values_mut() {
            if state.rule.source_stream != stream {
                continue;
            }
            let Cadence::Snapshot { interval_secs } = state.rule.cadence else {
                continue;
            };
            let Some(mut b) = state.next_boundary else {
                continue;
            };
            let due = |b: Timestamp| strictly_before.is_some_and(|t| b < t) || up_to.is_some_and(|t| b <= t);
            while due(b) {
                let v = buf.evaluate(&state.rule, b);
                if v.is_complete() {
                    state.latest = Some(v.clone());
                    out.push(v);
                }
                b += Duration::seconds(interval_secs);
            }
            state.next_boundary = Some(b);
        }
        out
    }
}

fn first_boundary(ts: Timestamp, interval_secs: i64) -> Timestamp {
    let ms = ts.timestamp_millis();
    let step = interval_secs * 1000;
    let aligned = ms.div_euclid(step) * step;
    let aligned = if aligned < ms { aligned + step } else { aligned };
    crate::types::ts_from_millis(aligned)
}

/// The rule engine. All state sits behind one lock so readers always see a
/// state in which every rule of a stream has seen the same points.
pub struct Windowing {
    broker: Arc<Broker>,
    config: WindowConfig,
    inner: RwLock<Inner>,
}

impl Windowing {
    pub fn new(broker: Arc<Broker>, config: WindowConfig) -> Self {
        Self {
            broker,
            config,
            inner: RwLock::new(Inner::default()),
        }
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn register_rule(&self, rule: WindowRule) -> Result<String, WindowError> {
        self.register_rules(vec![rule]).map(|mut ids| ids.remove(0))
    }

    /// Registers the rules of one model binding atomically: either all are
    /// registered or none. Input indices must be unique within the batch.
    pub fn register_rules(&self, rules: Vec<WindowRule>) -> Result<Vec<String>, WindowError> {
        let mut seen = std::collections::HashSet::new();
        let mut ids = std::collections::HashSet::new();
        for r in &rules {
            r.validate()?;
            if self.broker.topic(&r.source_stream).is_none() {
                return Err(WindowError::UnknownStream(r.source_stream.clone()));
            }
            if !seen.insert(r.input_index) {
                return Err(WindowError::DuplicateIndex(r.input_index));
            }
            if !ids.insert(r.rule_id.clone()) {
                return Err(WindowError::DuplicateRule(r.rule_id.clone()));
            }
        }
        let mut inner = self.inner.write();
        if let Some(r) = rules.iter().find(|r| inner.rules.contains_key(&r.rule_id)) {
            return Err(WindowError::DuplicateRule(r.rule_id.clone()));
        }
        let mut out = Vec::with_capacity(rules.len());
        for rule in rules {
            let next_boundary = match rule.cadence {
                Cadence::Snapshot { interval_secs } => inner
                    .buffers
                    .get(&rule.source_stream)
                    .and_then(|b| b.watermark)
                    .map(|w| first_boundary(w, interval_secs)),
                Cadence::PerPoint => None,
            };
            inner.buffers.entry(rule.source_stream.clone()).or_default();
            out.push(rule.rule_id.clone());
            inner.rules.insert(
                rule.rule_id.clone(),
                RuleState {
                    rule,
                    latest: None,
                    next_boundary,
                },
            );
        }
        Ok(out)
    }

    pub fn remove_rule(&self, rule_id: &str) -> Result<WindowRule, WindowError> {
        let mut inner = self.inner.write();
        let state = inner
            .rules
            .remove(rule_id)
            .ok_or_else(|| WindowError::UnknownRule(rule_id.to_string()))?;
        let stream = &state.rule.source_stream;
        if !inner.rules.values().any(|r| &r.rule.source_stream == stream) {
            inner.buffers.remove(stream);
        }
        Ok(state.rule)
    }

    pub fn rule(&self, rule_id: &str) -> Option<WindowRule> {
        self.inner.read().rules.get(rule_id).map(|s| s.rule.clone())
    }

    pub fn rules(&self) -> Vec<WindowRule> {
        self.inner.read().rules.values().map(|s| s.rule.clone()).collect()
    }

    /// Feeds one point. Returns the non-empty aggregates it caused: one per
    /// per-point rule on the stream, plus any snapshot boundaries the stream
    /// has now moved past.
    pub fn on_point(&self, point: &DataPoint) -> Vec<AggregateValue> {
        let mut inner = self.inner.write();
        let horizon = inner.horizon(&point.stream_id, &self.config);
        let Some(buf) = inner.buffers.get_mut(&point.stream_id) else {
            return Vec::new();
        };
        let ts = point.timestamp;
        if let Some(w) = buf.watermark {
            if ts < w - self.config.lateness {
                buf.late_dropped += 1;
                tracing::debug!(stream = %point.stream_id, ts = %ts, "dropping late point");
                return Vec::new();
            }
        }
        let pos = buf.points.partition_point(|(t, _)| *t <= ts);
        buf.points.insert(pos, (ts, point.value));
        let first_point = buf.watermark.is_none();
        let watermark = buf.watermark.map_or(ts, |w| w.max(ts));
        buf.watermark = Some(watermark);
        let cutoff = watermark - horizon;
        while buf.points.front().is_some_and(|(t, _)| *t <= cutoff) {
            buf.points.pop_front();
        }

        let mut out = Vec::new();
        let buf = &inner.buffers[&point.stream_id];
        let mut per_point = Vec::new();
        for (id, state) in inner.rules.iter() {
            if state.rule.source_stream != point.stream_id {
                continue;
            }
            if state.rule.cadence == Cadence::PerPoint {
                per_point.push((id.clone(), buf.evaluate(&state.rule, ts)));
            }
        }
        for (id, v) in per_point {
            if v.is_complete() {
                inner.rules.get_mut(&id).expect("rule exists").latest = Some(v.clone());
                out.push(v);
            }
        }
        if first_point {
            for state in inner.rules.values_mut() {
                if state.rule.source_stream == point.stream_id {
                    if let Cadence::Snapshot { interval_secs } = state.rule.cadence {
                        state.next_boundary.get_or_insert(first_boundary(ts, interval_secs));
                    }
                }
            }
        }
        out.extend(inner.emit_snapshots(&point.stream_id, Some(watermark), None));
        out
    }

    /// Emits snapshot boundaries `<= now` on every stream. Call once all
    /// points with timestamps `<= now` have been fed.
    pub fn advance_to(&self, now: Timestamp) -> Vec<AggregateValue> {
        let mut inner = self.inner.write();
        let streams: Vec<String> = inner.buffers.keys().cloned().collect();
        let mut out = Vec::new();
        for s in streams {
            out.extend(inner.emit_snapshots(&s, None, Some(now)));
        }
        out
    }

    /// Most recent non-empty emission, or an empty marker before the first.
    pub fn latest(&self, rule_id: &str) -> Result<AggregateValue, WindowError> {
        let inner = self.inner.read();
        let state = inner
            .rules
            .get(rule_id)
            .ok_or_else(|| WindowError::UnknownRule(rule_id.to_string()))?;
        Ok(state.latest.clone().unwrap_or_else(|| AggregateValue {
            rule_id: rule_id.to_string(),
            as_of: Timestamp::MIN_UTC,
            value: None,
            sample_count: 0,
        }))
    }

    /// Evaluates a rule at an arbitrary instant over the buffered points.
    pub fn evaluate(&self, rule_id: &str, as_of: Timestamp) -> Result<AggregateValue, WindowError> {
        let inner = self.inner.read();
        let state = inner
            .rules
            .get(rule_id)
            .ok_or_else(|| WindowError::UnknownRule(rule_id.to_string()))?;
        Ok(match inner.buffers.get(&state.rule.source_stream) {
            Some(buf) => buf.evaluate(&state.rule, as_of),
            None => AggregateValue {
                rule_id: rule_id.to_string(),
                as_of,
                value: None,
                sample_count: 0,
            },
        })
    }

    /// Builds the model input at `as_of`. `binding` lists rule ids; each
    /// rule lands in the slot named by its `input_index`, and every rule is
    /// evaluated at `as_of` itself so that a cycle sees exactly the window
    /// ending at its own instant.
    pub fn assemble_input_vector(&self, binding: &[String], as_of: Timestamp) -> Result<InputVector, WindowError> {
        let inner = self.inner.read();
        let n = binding.len();
        let mut values = vec![f64::NAN; n];
        let mut completeness = vec![false; n];
        let mut filled = vec![false; n];
        for id in binding {
            let state = inner.rules.get(id).ok_or_else(|| WindowError::UnknownRule(id.clone()))?;
            let idx = state.rule.input_index;
            if idx >= n {
                return Err(WindowError::BadWindow(format!(
                    "rule `{id}` has input index {idx} outside a {n}-slot binding"
                )));
            }
            if std::mem::replace(&mut filled[idx], true) {
                return Err(WindowError::DuplicateIndex(idx));
            }
            if let Some(v) = inner
                .buffers
                .get(&state.rule.source_stream)
                .and_then(|b| b.evaluate(&state.rule, as_of).value)
            {
                values[idx] = v;
                completeness[idx] = true;
            }
        }
        Ok(InputVector {
            as_of,
            values,
            completeness,
        })
    }

    /// Points dropped for arriving later than the lateness bound.
    pub fn late_dropped(&self, stream: &str) -> u64 {
        self.inner.read().buffers.get(stream).map_or(0, |b| b.late_dropped)
    }

    pub fn total_late_dropped(&self) -> u64 {
        self.inner.read().buffers.values().map(|b| b.late_dropped).sum()
    }

    pub fn buffered(&self, stream: &str) -> usize {
        self.inner.read().buffers.get(stream).map_or(0, |b| b.points.len())
    }
}
