//! Feeding recorded CSV files through a node as if they were live.
//!
//! Files use the repository download format (`timestamp,value`). Several
//! files are merged by timestamp; all points sharing a timestamp are
//! ingested before the node is advanced to it, so a scheduled cycle at `t`
//! sees every point at `t`. With a finite speedup the replay sleeps for the
//! compressed gap between timestamps; with an infinite one it runs flat out
//! and only moves the (virtual) clock.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::clock::ManualClock;
use crate::node::{Node, NodeError};
use crate::repository::{parse_csv, RepositoryError};
use crate::types::{DataPoint, Timestamp};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("speedup must be positive, got {0}")]
    BadSpeedup(f64),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Node(#[from] NodeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speedup {
    /// As fast as possible.
    Infinite,
    /// Wall-clock gaps are data gaps divided by this factor.
    Factor(f64),
}

impl Speedup {
    /// `inf` (or any infinite value) maps to [`Speedup::Infinite`].
    pub fn from_factor(f: f64) -> Result<Self, ReplayError> {
        if f.is_infinite() && f > 0.0 {
            Ok(Speedup::Infinite)
        } else if f > 0.0 && f.is_finite() {
            Ok(Speedup::Factor(f))
        } else {
            Err(ReplayError::BadSpeedup(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub published: usize,
    pub first: Option<Timestamp>,
    pub last: Option<Timestamp>,
    pub predictions: usize,
    pub events: usize,
}

/// Reads one file into points for `stream_id`, ordered by timestamp (ties
/// keep file order).
pub fn load_csv(path: &Path, stream_id: &str) -> Result<Vec<DataPoint>, ReplayError> {
    let doc = std::fs::read_to_string(path).map_err(|source| ReplayError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let rows = parse_csv(&doc).map_err(|e| match e {
        RepositoryError::Csv { line, msg } => ReplayError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        },
        other => ReplayError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: other.to_string(),
        },
    })?;
    let mut points: Vec<DataPoint> = rows
        .into_iter()
        .map(|r| DataPoint::new(stream_id, r.timestamp, r.value))
        .collect();
    points.sort_by_key(|p| p.timestamp);
    Ok(points)
}

/// Replays `(csv path, stream id)` pairs into `node`. When `clock` is given
/// it is moved to each timestamp before that timestamp's points go in.
pub fn replay_files(
    node: &Node,
    inputs: &[(PathBuf, String)],
    speedup: Speedup,
    clock: Option<&ManualClock>,
) -> Result<ReplayReport, ReplayError> {
    let mut points = Vec::new();
    for (path, sid) in inputs {
        if node.broker().topic(sid).is_none() {
            return Err(ReplayError::UnknownStream(sid.clone()));
        }
        points.extend(load_csv(path, sid)?);
    }
    replay_points(node, points, speedup, clock)
}

/// Single-file convenience wrapper around [`replay_files`].
pub fn replay(
    node: &Node,
    csv_path: &Path,
    stream_id: &str,
    speedup: Speedup,
    clock: Option<&ManualClock>,
) -> Result<ReplayReport, ReplayError> {
    replay_files(node, &[(csv_path.to_path_buf(), stream_id.to_string())], speedup, clock)
}

/// Replays already-loaded points (merged stably by timestamp).
pub fn replay_points(
    node: &Node,
    mut points: Vec<DataPoint>,
    speedup: Speedup,
    clock: Option<&ManualClock>,
) -> Result<ReplayReport, ReplayError> {
    points.sort_by_key(|p| p.timestamp);
    let mut report = ReplayReport {
        published: 0,
        first: points.first().map(|p| p.timestamp),
        last: points.last().map(|p| p.timestamp),
        predictions: 0,
        events: 0,
    };
    let mut i = 0;
    let mut prev: Option<Timestamp> = None;
    while i < points.len() {
        let t = points[i].timestamp;
        if let (Speedup::Factor(f), Some(p)) = (speedup, prev) {
            let gap = (t - p).to_std().unwrap_or_default();
            std::thread::sleep(gap.div_f64(f));
        }
        if let Some(c) = clock {
            c.advance_to(t);
        }
        while i < points.len() && points[i].timestamp == t {
            let r = node.ingest(points[i].clone())?;
            report.published += 1;
            report.predictions += r.predictions().count();
            report.events += r.events.len();
            i += 1;
        }
        let r = node.advance_to(t);
        report.predictions += r.predictions().count();
        report.events += r.events.len();
        prev = Some(t);
    }
    Ok(report)
}
