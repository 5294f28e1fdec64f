use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::types::Timestamp;

/// When a time-scheduled model stops on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Terminator {
    /// Fire this many cycles in total.
    Count(u64),
    /// Fire boundaries `<= end`.
    End(Timestamp),
    #[default]
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Schedule {
    OnDemand,
    TimeScheduled {
        start: Timestamp,
        interval_secs: i64,
        #[serde(default)]
        terminator: Terminator,
    },
    DataDriven {
        trigger_streams: Vec<String>,
    },
    EventDriven {
        trigger_rule: String,
    },
}

impl Schedule {
    /// Numeric mode code used on the wire: 1 on-demand, 2 time-scheduled,
    /// 3 data-driven, 4 event-driven.
    pub fn code(&self) -> u8 {
        match self {
            Schedule::OnDemand => 1,
            Schedule::TimeScheduled { .. } => 2,
            Schedule::DataDriven { .. } => 3,
            Schedule::EventDriven { .. } => 4,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Schedule::OnDemand => Ok(()),
            Schedule::TimeScheduled {
                start,
                interval_secs,
                terminator,
            } => {
                if *interval_secs <= 0 {
                    return Err(format!("interval must be positive, got {interval_secs}s"));
                }
                match terminator {
                    Terminator::Count(0) => Err("count must be at least 1".into()),
                    Terminator::End(end) if end < start => Err("end precedes start".into()),
                    _ => Ok(()),
                }
            }
            Schedule::DataDriven { trigger_streams } if trigger_streams.is_empty() => {
                Err("data-driven mode needs at least one trigger stream".into())
            }
            Schedule::DataDriven { .. } => Ok(()),
            Schedule::EventDriven { trigger_rule } if trigger_rule.trim().is_empty() => {
                Err("event-driven mode needs a trigger rule".into())
            }
            Schedule::EventDriven { .. } => Ok(()),
        }
    }

    /// The `k`-th cycle instant of a time schedule, or `None` past its
    /// terminator (and for the other modes).
    pub fn boundary(&self, k: u64) -> Option<Timestamp> {
        let Schedule::TimeScheduled {
            start,
            interval_secs,
            terminator,
        } = self
        else {
            return None;
        };
        let secs = interval_secs.checked_mul(i64::try_from(k).ok()?)?;
        let b = start.checked_add_signed(Duration::try_seconds(secs)?)?;
        match terminator {
            Terminator::Count(n) if k >= *n => None,
            Terminator::End(end) if b > *end => None,
            _ => Some(b),
        }
    }

    /// Cycle indices in `[from, ..]` whose instants are `<= now`, as a
    /// half-open range `[from, to)`. Computed arithmetically so a long
    /// downtime does not mean a long loop.
    pub fn due_range(&self, from: u64, now: Timestamp) -> (u64, u64) {
        let Schedule::TimeScheduled {
            start,
            interval_secs,
            terminator,
        } = self
        else {
            return (from, from);
        };
        if now < *start {
            return (from, from);
        }
        let step_ms = interval_secs * 1000;
        let count_upto = |t: Timestamp| ((t - *start).num_milliseconds() / step_ms) as u64 + 1;
        let mut to = count_upto(now);
        match terminator {
            Terminator::Count(n) => to = to.min(*n),
            Terminator::End(end) => to = to.min(count_upto(*end)),
            Terminator::Unbounded => {}
        }
        (from, to.max(from))
    }

    pub fn exhausted(&self, next: u64) -> bool {
        matches!(self, Schedule::TimeScheduled { .. }) && self.boundary(next).is_none()
    }
}
