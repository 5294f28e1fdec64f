//! Shared value types that flow through every subsystem.

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// UTC instant. Millisecond resolution is preserved end to end.
pub type Timestamp = DateTime<Utc>;

/// One timestamped numeric observation on a named stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub stream_id: String,
    pub timestamp: Timestamp,
    pub value: f64,
}

impl DataPoint {
    pub fn new(stream_id: impl Into<String>, timestamp: Timestamp, value: f64) -> Self {
        Self {
            stream_id: stream_id.into(),
            timestamp,
            value,
        }
    }
}

/// Formats an instant as ISO-8601 UTC with a `Z` suffix; sub-second digits only when present.
pub fn format_ts(ts: &Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses an RFC 3339 instant with any offset and normalizes it to UTC.
pub fn parse_ts(s: &str) -> Result<Timestamp, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s.trim()).map(|t| t.with_timezone(&Utc))
}

pub fn ts_from_millis(ms: i64) -> Timestamp {
    Utc.timestamp_millis_opt(ms)
        .single()
        .unwrap_or(DateTime::<Utc>::MIN_UTC)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_normalize_to_utc() {
        let t = parse_ts("2012-12-06T20:00:00+09:00").unwrap();
        assert_eq!(format_ts(&t), "2012-12-06T11:00:00Z");
    }

    #[test]
    fn millis_survive_formatting() {
        let t = ts_from_millis(1_354_791_600_250);
        let s = format_ts(&t);
        assert_eq!(s, "2012-12-06T11:00:00.250Z");
        assert_eq!(parse_ts(&s).unwrap(), t);
    }
}
