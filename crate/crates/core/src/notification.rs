//! Threshold detection over streams.
//!
//! A rule is a comparison against a fixed threshold plus a qualifier saying
//! how many matches make an event:
//!
//! * `every_match` fires on each matching point;
//! * `consecutive(n)` fires on the n-th match in a row, then starts counting
//!   from zero again; a non-match resets the count;
//! * `sustained(window)` fires once per run of matches, as soon as every
//!   point in the trailing `window` matches and the rule has observed the
//!   stream for at least `window`.
//!
//! A cooldown (measured on point timestamps) suppresses events closer than
//! `cooldown` to the previous one. A `consecutive` rule that completes during
//! the cooldown stays armed and fires on the first matching point after it.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use chrono::Duration;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_core::Broker;
use crate::types::{format_ts, DataPoint, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotificationError {
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("rule `{0}` already registered")]
    DuplicateRule(String),
    #[error("bad rule: {0}")]
    BadRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Cmp {
    fn symbol(self) -> &'static str {
        match self {
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub cmp: Cmp,
    pub threshold: f64,
}

impl Predicate {
    pub fn matches(&self, v: f64) -> bool {
        match self.cmp {
            Cmp::Gt => v > self.threshold,
            Cmp::Ge => v >= self.threshold,
            Cmp::Lt => v < self.threshold,
            Cmp::Le => v <= self.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualifier {
    EveryMatch,
    Consecutive { n: u32 },
    Sustained { window_secs: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationRule {
    pub rule_id: String,
    pub source_stream: String,
    pub predicate: Predicate,
    pub qualifier: Qualifier,
    #[serde(default)]
    pub cooldown_secs: i64,
}

impl NotificationRule {
    pub fn validate(&self) -> Result<(), NotificationError> {
        let bad = |m: String| Err(NotificationError::BadRule(m));
        if self.rule_id.trim().is_empty() {
            return bad("empty rule id".into());
        }
        if !self.predicate.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        if self.cooldown_secs < 0 {
            return bad(format!("negative cooldown {}s", self.cooldown_secs));
        }
        match self.qualifier {
            Qualifier::Consecutive { n: 0 } => bad("consecutive count must be at least 1".into()),
            Qualifier::Sustained { window_secs } if window_secs <= 0 => {
                bad(format!("sustained window must be positive, got {window_secs}s"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationEvent {
    pub rule_id: String,
    pub source_stream: String,
    /// Timestamp of the point that completed the pattern.
    pub triggered_at: Timestamp,
    /// Values that made up the match, oldest first; never empty.
    pub values: Vec<f64>,
    pub message: String,
}

/// Per-rule state machine. Kept separate from the engine so it can be driven
/// directly and compared against simple simulations.
#[derive(Debug, Clone)]
pub struct RuleMachine {
    rule: NotificationRule,
    run: VecDeque<(Timestamp, f64)>,
    first_seen: Option<Timestamp>,
    last_miss: Option<Timestamp>,
    fired_this_run: bool,
    last_fired: Option<Timestamp>,
}

impl RuleMachine {
    pub fn new(rule: NotificationRule) -> Result<Self, NotificationError> {
        rule.validate()?;
        Ok(Self {
            rule,
            run: VecDeque::new(),
            first_seen: None,
            last_miss: None,
            fired_this_run: false,
            last_fired: None,
        })
    }

    pub fn rule(&self) -> &NotificationRule {
        &self.rule
    }

    fn cooling(&self, ts: Timestamp) -> bool {
        self.last_fired
            .is_some_and(|last| ts - last < Duration::seconds(self.rule.cooldown_secs))
    }

    fn event(&mut self, ts: Timestamp, values: Vec<f64>) -> NotificationEvent {
        self.last_fired = Some(ts);
        let q = match self.rule.qualifier {
            Qualifier::EveryMatch => "match".to_string(),
            Qualifier::Consecutive { n } => format!("{n} consecutive"),
            Qualifier::Sustained { window_secs } => format!("sustained {window_secs}s"),
        };
        NotificationEvent {
            rule_id: self.rule.rule_id.clone(),
            source_stream: self.rule.source_stream.clone(),
            triggered_at: ts,
            message: format!(
                "{}: {} {} {} ({q}) at {}",
                self.rule.rule_id,
                self.rule.source_stream,
                self.rule.predicate.cmp.symbol(),
                self.rule.predicate.threshold,
                format_ts(&ts)
            ),
            values,
        }
    }

    /// Feeds one value; returns the event it completes, if any.
    pub fn step(&mut self, ts: Timestamp, value: f64) -> Option<NotificationEvent> {
        let first_seen = *self.first_seen.get_or_insert(ts);
        if !self.rule.predicate.matches(value) {
            self.run.clear();
            self.last_miss = Some(ts);
            self.fired_this_run = false;
            return None;
        }
        match self.rule.qualifier {
            Qualifier::EveryMatch => (!self.cooling(ts)).then(|| self.event(ts, vec![value])),
            Qualifier::Consecutive { n } => {
                let n = n as usize;
                self.run.push_back((ts, value));
                if self.run.len() > n {
                    self.run.pop_front();
                }
                if self.run.len() == n && !self.cooling(ts) {
                    let values = self.run.drain(..).map(|(_, v)| v).collect();
                    Some(self.event(ts, values))
                } else {
                    None
                }
            }
            Qualifier::Sustained { window_secs } => {
                let window = Duration::seconds(window_secs);
                self.run.push_back((ts, value));
                while self.run.front().is_some_and(|(t, _)| *t <= ts - window) {
                    self.run.pop_front();
                }
                // every point in (ts - window, ts] matched, and the stream
                // was observed for the whole window
                let covered = first_seen <= ts - window && self.last_miss.is_none_or(|u| u <= ts - window);
                if covered && !self.fired_this_run && !self.cooling(ts) {
                    self.fired_this_run = true;
                    let values = self.run.iter().map(|(_, v)| *v).collect();
                    Some(self.event(ts, values))
                } else {
                    None
                }
            }
        }
    }
}

pub struct NotificationEngine {
    broker: Arc<Broker>,
    rules: RwLock<BTreeMap<String, Arc<Mutex<RuleMachine>>>>,
}

impl NotificationEngine {
    pub fn new(broker: Arc<Broker>) -> Self {
        Self {
            broker,
            rules: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn register_rule(&self, rule: NotificationRule) -> Result<String, NotificationError> {
        let machine = RuleMachine::new(rule)?;
        let rule = machine.rule();
        if self.broker.topic(&rule.source_stream).is_none() {
            return Err(NotificationError::UnknownStream(rule.source_stream.clone()));
        }
        let id = rule.rule_id.clone();
        let mut rules = self.rules.write();
        if rules.contains_key(&id) {
            return Err(NotificationError::DuplicateRule(id));
        }
        rules.insert(id.clone(), Arc::new(Mutex::new(machine)));
        Ok(id)
    }

    pub fn remove_rule(&self, rule_id: &str) -> Result<NotificationRule, NotificationError> {
        self.rules
            .write()
            .remove(rule_id)
            .map(|m| m.lock().rule().clone())
            .ok_or_else(|| NotificationError::UnknownRule(rule_id.to_string()))
    }

    pub fn rule(&self, rule_id: &str) -> Option<NotificationRule> {
        self.rules.read().get(rule_id).map(|m| m.lock().rule().clone())
    }

    pub fn rules(&self) -> Vec<NotificationRule> {
        self.rules.read().values().map(|m| m.lock().rule().clone()).collect()
    }

    /// Runs every rule on the point's stream, in rule-id order.
    pub fn evaluate(&self, point: &DataPoint) -> Vec<NotificationEvent> {
        let machines: Vec<Arc<Mutex<RuleMachine>>> = self
            .rules
            .read()
            .values()
            .filter(|m| m.lock().rule().source_stream == point.stream_id)
            .cloned()
            .collect();
        machines
            .iter()
            .filter_map(|m| m.lock().step(point.timestamp, point.value))
            .collect()
    }
}
