//! Durable store for stream values and the site/source/sensor/variable/unit
//! metadata model.
//!
//! On disk a repository is a directory holding `metadata.json` (rewritten
//! atomically on every metadata change) and one append-only value log per
//! stream under `values/`. Each log line is `<unix millis>,<value>` with the
//! value in shortest round-trip decimal form. A trailing line without a
//! newline is a torn write and is ignored on reload.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_core::StreamKind;
use crate::types::{format_ts, parse_ts, ts_from_millis, DataPoint, Timestamp};

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("stream `{0}` already exists")]
    DuplicateStream(String),
    #[error("stream `{0}` is closed")]
    ClosedStream(String),
    #[error("bad range: from {0} is after to {1}")]
    BadRange(String, String),
    #[error("{entity} references unknown {field} `{id}`")]
    DanglingReference {
        entity: &'static str,
        field: &'static str,
        id: String,
    },
    #[error("invalid metadata: {0}")]
    Invalid(String),
    #[error("point for stream `{got}` appended to `{expected}`")]
    StreamMismatch { expected: String, got: String },
    #[error("non-finite value for stream `{0}`")]
    NonFiniteValue(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt metadata document: {0}")]
    Corrupt(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, RepositoryError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site_id: String,
    pub name: String,
    #[serde(default)]
    pub latitude: Option<f64>,
    #[serde(default)]
    pub longitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub responsible_party: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit_id: String,
    pub symbol: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableRecord {
    pub variable_id: String,
    pub name: String,
    pub unit_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRecord {
    pub sensor_id: String,
    pub site_id: String,
    pub source_id: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetadataEntity {
    Site(SiteRecord),
    Source(SourceRecord),
    Unit(UnitRecord),
    Variable(VariableRecord),
    Sensor(SensorRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub stream_id: String,
    #[serde(default = "default_kind")]
    pub kind: StreamKind,
    /// Absent for streams with no physical sensor (notifications, ad-hoc derived streams).
    pub sensor_id: Option<String>,
    pub variable_id: Option<String>,
    pub created_at: Timestamp,
    pub closed: bool,
}

fn default_kind() -> StreamKind {
    StreamKind::Sensor
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRow {
    pub timestamp: Timestamp,
    pub value: f64,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchFilter {
    pub variable_id: Option<String>,
    pub site_id: Option<String>,
    /// Streams with at least one value in `[from, to)`.
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct MetadataDoc {
    sites: BTreeMap<String, SiteRecord>,
    sources: BTreeMap<String, SourceRecord>,
    units: BTreeMap<String, UnitRecord>,
    variables: BTreeMap<String, VariableRecord>,
    sensors: BTreeMap<String, SensorRecord>,
    streams: BTreeMap<String, StreamRecord>,
}

struct StreamValues {
    rows: RwLock<Vec<ValueRow>>,
    log: Mutex<Option<File>>,
}

pub struct Repository {
    dir: Option<PathBuf>,
    meta: RwLock<MetadataDoc>,
    values: RwLock<BTreeMap<String, Arc<StreamValues>>>,
}

fn log_file_name(stream_id: &str) -> String {
    // ids are arbitrary non-whitespace strings; hex keeps file names portable
    let hex: String = stream_id.bytes().map(|b| format!("{b:02x}")).collect();
    format!("{hex}.log")
}

impl Repository {
    /// A repository that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            meta: RwLock::new(MetadataDoc::default()),
            values: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens (or initializes) a file-backed repository rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("values"))?;
        let meta_path = dir.join("metadata.json");
        let meta: MetadataDoc = if meta_path.exists() {
            serde_json::from_slice(&fs::read(&meta_path)?)?
        } else {
            MetadataDoc::default()
        };
        let mut values = BTreeMap::new();
        for id in meta.streams.keys() {
            let path = dir.join("values").join(log_file_name(id));
            let rows = if path.exists() { load_log(&path)? } else { Vec::new() };
            values.insert(
                id.clone(),
                Arc::new(StreamValues {
                    rows: RwLock::new(rows),
                    log: Mutex::new(None),
                }),
            );
        }
        Ok(Self {
            dir: Some(dir),
            meta: RwLock::new(meta),
            values: RwLock::new(values),
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn persist_meta(&self, meta: &MetadataDoc) -> Result<()> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join("metadata.json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(meta)?)?;
            fs::rename(tmp, dir.join("metadata.json"))?;
        }
        Ok(())
    }

    /// Inserts or replaces a metadata entity by id after checking its references.
    pub fn upsert_metadata(&self, entity: MetadataEntity) -> Result<String> {
        let mut meta = self.meta.write();
        let dangling = |entity: &'static str, field: &'static str, id: &str| RepositoryError::DanglingReference {
            entity,
            field,
            id: id.to_string(),
        };
        let non_empty = |id: &str| {
            if id.trim().is_empty() {
                Err(RepositoryError::Invalid("empty id".into()))
            } else {
                Ok(())
            }
        };
        let id = match entity {
            MetadataEntity::Site(s) => {
                non_empty(&s.site_id)?;
                if s.latitude.is_some_and(|v| !(-90.0..=90.0).contains(&v)) {
                    return Err(RepositoryError::Invalid(format!("latitude out of range for `{}`", s.site_id)));
                }
                if s.longitude.is_some_and(|v| !(-180.0..=180.0).contains(&v)) {
                    return Err(RepositoryError::Invalid(format!("longitude out of range for `{}`", s.site_id)));
                }
                let id = s.site_id.clone();
                meta.sites.insert(id.clone(), s);
                id
            }
            MetadataEntity::Source(s) => {
                non_empty(&s.source_id)?;
                let id = s.source_id.clone();
                meta.sources.insert(id.clone(), s);
                id
            }
            MetadataEntity::Unit(u) => {
                non_empty(&u.unit_id)?;
                let id = u.unit_id.clone();
                meta.units.insert(id.clone(), u);
                id
            }
            MetadataEntity::Variable(v) => {
                non_empty(&v.variable_id)?;
                if !meta.units.contains_key(&v.unit_id) {
                    return Err(dangling("variable", "unit_id", &v.unit_id));
                }
                let id = v.variable_id.clone();
                meta.variables.insert(id.clone(), v);
                id
            }
            MetadataEntity::Sensor(s) => {
                non_empty(&s.sensor_id)?;
                if !meta.sites.contains_key(&s.site_id) {
                    return Err(dangling("sensor", "site_id", &s.site_id));
                }
                if !meta.sources.contains_key(&s.source_id) {
                    return Err(dangling("sensor", "source_id", &s.source_id));
                }
                let id = s.sensor_id.clone();
                meta.sensors.insert(id.clone(), s);
                id
            }
        };
        self.persist_meta(&meta)?;
        Ok(id)
    }

    pub fn site(&self, id: &str) -> Option<SiteRecord> {
        self.meta.read().sites.get(id).cloned()
    }

    pub fn sensor(&self, id: &str) -> Option<SensorRecord> {
        self.meta.read().sensors.get(id).cloned()
    }

    pub fn variable(&self, id: &str) -> Option<VariableRecord> {
        self.meta.read().variables.get(id).cloned()
    }

    pub fn unit(&self, id: &str) -> Option<UnitRecord> {
        self.meta.read().units.get(id).cloned()
    }

    pub fn source(&self, id: &str) -> Option<SourceRecord> {
        self.meta.read().sources.get(id).cloned()
    }

    /// All metadata entities, grouped by kind.
    pub fn metadata(&self) -> Vec<MetadataEntity> {
        let m = self.meta.read();
        m.sites
            .values()
            .cloned()
            .map(MetadataEntity::Site)
            .chain(m.sources.values().cloned().map(MetadataEntity::Source))
            .chain(m.units.values().cloned().map(MetadataEntity::Unit))
            .chain(m.variables.values().cloned().map(MetadataEntity::Variable))
            .chain(m.sensors.values().cloned().map(MetadataEntity::Sensor))
            .collect()
    }

    pub fn create(
        &self,
        stream_id: &str,
        kind: StreamKind,
        sensor_id: Option<&str>,
        variable_id: Option<&str>,
        created_at: Timestamp,
    ) -> Result<StreamRecord> {
        crate::stream_core::validate_stream_id(stream_id).map_err(|e| RepositoryError::Invalid(e.to_string()))?;
        let mut meta = self.meta.write();
        if meta.streams.contains_key(stream_id) {
            return Err(RepositoryError::DuplicateStream(stream_id.to_string()));
        }
        if let Some(s) = sensor_id {
            if !meta.sensors.contains_key(s) {
                return Err(RepositoryError::DanglingReference {
                    entity: "stream",
                    field: "sensor_id",
                    id: s.to_string(),
                });
            }
        }
        if let Some(v) = variable_id {
            if !meta.variables.contains_key(v) {
                return Err(RepositoryError::DanglingReference {
                    entity: "stream",
                    field: "variable_id",
                    id: v.to_string(),
                });
            }
        }
        let rec = StreamRecord {
            stream_id: stream_id.to_string(),
            kind,
            sensor_id: sensor_id.map(str::to_string),
            variable_id: variable_id.map(str::to_string),
            created_at,
            closed: false,
        };
        meta.streams.insert(stream_id.to_string(), rec.clone());
        self.persist_meta(&meta)?;
        self.values.write().insert(
            stream_id.to_string(),
            Arc::new(StreamValues {
                rows: RwLock::new(Vec::new()),
                log: Mutex::new(None),
            }),
        );
        Ok(rec)
    }

    pub fn stream(&self, stream_id: &str) -> Option<StreamRecord> {
        self.meta.read().streams.get(stream_id).cloned()
    }

    pub fn streams(&self) -> Vec<StreamRecord> {
        self.meta.read().streams.values().cloned().collect()
    }

    /// Marks a stream closed; later appends fail with `ClosedStream`.
    pub fn close(&self, stream_id: &str) -> Result<()> {
        let mut meta = self.meta.write();
        let rec = meta
            .streams
            .get_mut(stream_id)
            .ok_or_else(|| RepositoryError::UnknownStream(stream_id.to_string()))?;
        rec.closed = true;
        self.persist_meta(&meta)
    }

    fn values_of(&self, stream_id: &str) -> Result<Arc<StreamValues>> {
        self.values
            .read()
            .get(stream_id)
            .cloned()
            .ok_or_else(|| RepositoryError::UnknownStream(stream_id.to_string()))
    }

    /// Appends points to one stream. Every point must belong to `stream_id`
    /// and be finite; the batch is written with a single `write_all`.
    pub fn append(&self, stream_id: &str, points: &[DataPoint]) -> Result<usize> {
        match self.meta.read().streams.get(stream_id) {
            None => return Err(RepositoryError::UnknownStream(stream_id.to_string())),
            Some(r) if r.closed => return Err(RepositoryError::ClosedStream(stream_id.to_string())),
            Some(_) => {}
        }
        for p in points {
            if p.stream_id != stream_id {
                return Err(RepositoryError::StreamMismatch {
                    expected: stream_id.to_string(),
                    got: p.stream_id.clone(),
                });
            }
            if !p.value.is_finite() {
                return Err(RepositoryError::NonFiniteValue(stream_id.to_string()));
            }
        }
        let sv = self.values_of(stream_id)?;
        let mut log = sv.log.lock();
        if let Some(dir) = &self.dir {
            if log.is_none() {
                let path = dir.join("values").join(log_file_name(stream_id));
                *log = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let mut buf = String::with_capacity(points.len() * 24);
            for p in points {
                buf.push_str(&format!("{},{}\n", p.timestamp.timestamp_millis(), p.value));
            }
            let f = log.as_mut().expect("opened above");
            f.write_all(buf.as_bytes())?;
            f.flush()?;
        }
        sv.rows.write().extend(points.iter().map(|p| ValueRow {
            timestamp: p.timestamp,
            value: p.value,
        }));
        Ok(points.len())
    }

    /// Rows with `from <= ts < to`, ascending by timestamp (ties keep append
    /// order), truncated to `limit`.
    pub fn retrieve(
        &self,
        stream_id: &str,
        from: Option<Timestamp>,
        to: Option<Timestamp>,
        limit: Option<usize>,
    ) -> Result<Vec<ValueRow>> {
        if let (Some(a), Some(b)) = (from, to) {
            if a > b {
                return Err(RepositoryError::BadRange(format_ts(&a), format_ts(&b)));
            }
        }
        let sv = self.values_of(stream_id)?;
        let rows = sv.rows.read();
        let mut out: Vec<ValueRow> = rows
            .iter()
            .filter(|r| from.is_none_or(|a| r.timestamp >= a) && to.is_none_or(|b| r.timestamp < b))
            .cloned()
            .collect();
        drop(rows);
        out.sort_by_key(|r| r.timestamp);
        if let Some(n) = limit {
            out.truncate(n);
        }
        Ok(out)
    }

    pub fn count(&self, stream_id: &str) -> Result<usize> {
        Ok(self.values_of(stream_id)?.rows.read().len())
    }

    pub fn search(&self, filter: &SearchFilter) -> Result<Vec<StreamRecord>> {
        if let (Some(a), Some(b)) = (filter.from, filter.to) {
            if a > b {
                return Err(RepositoryError::BadRange(format_ts(&a), format_ts(&b)));
            }
        }
        let meta = self.meta.read();
        let mut out = Vec::new();
        for rec in meta.streams.values() {
            if let Some(v) = &filter.variable_id {
                if rec.variable_id.as_ref() != Some(v) {
                    continue;
                }
            }
            if let Some(site) = &filter.site_id {
                let on_site = rec
                    .sensor_id
                    .as_ref()
                    .and_then(|s| meta.sensors.get(s))
                    .is_some_and(|s| &s.site_id == site);
                if !on_site {
                    continue;
                }
            }
            if filter.from.is_some() || filter.to.is_some() {
                let Some(sv) = self.values.read().get(&rec.stream_id).cloned() else {
                    continue;
                };
                let hit = sv.rows.read().iter().any(|r| {
                    filter.from.is_none_or(|a| r.timestamp >= a) && filter.to.is_none_or(|b| r.timestamp < b)
                });
                if !hit {
                    continue;
                }
            }
            out.push(rec.clone());
        }
        Ok(out)
    }

    /// Removes the stream record and its values. Shared metadata stays.
    pub fn delete(&self, stream_id: &str) -> Result<()> {
        let mut meta = self.meta.write();
        if meta.streams.remove(stream_id).is_none() {
            return Err(RepositoryError::UnknownStream(stream_id.to_string()));
        }
        self.persist_meta(&meta)?;
        if let Some(sv) = self.values.write().remove(stream_id) {
            *sv.log.lock() = None;
        }
        if let Some(dir) = &self.dir {
            let path = dir.join("values").join(log_file_name(stream_id));
            match fs::remove_file(path) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    /// CSV export: header `timestamp,value`, ISO-8601 UTC timestamps.
    pub fn download(&self, stream_id: &str, from: Option<Timestamp>, to: Option<Timestamp>) -> Result<String> {
        let rows = self.retrieve(stream_id, from, to, None)?;
        Ok(render_csv(&rows))
    }
}

pub fn render_csv(rows: &[ValueRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 32 + 16);
    out.push_str("timestamp,value\n");
    for r in rows {
        out.push_str(&format_ts(&r.timestamp));
        out.push(',');
        out.push_str(&r.value.to_string());
        out.push('\n');
    }
    out
}

/// Parses the download format back into rows. Errors carry the 1-based line
/// number in the document (the header is line 1).
pub fn parse_csv(doc: &str) -> Result<Vec<ValueRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(doc.as_bytes());
    let headers = reader.headers().map_err(|e| RepositoryError::Csv {
        line: 1,
        msg: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "value" {
        return Err(RepositoryError::Csv {
            line: 1,
            msg: "expected header `timestamp,value`".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| RepositoryError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| RepositoryError::Csv { line, msg };
        if rec.len() != 2 {
            return Err(bad(format!("expected 2 fields, got {}", rec.len())));
        }
        let timestamp = parse_ts(&rec[0]).map_err(|e| bad(format!("timestamp `{}`: {e}", &rec[0])))?;
        let value: f64 = rec[1].parse().map_err(|_| bad(format!("value `{}` is not a number", &rec[1])))?;
        if !value.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        rows.push(ValueRow { timestamp, value });
    }
    Ok(rows)
}

fn load_log(path: &Path) -> Result<Vec<ValueRow>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if !line.ends_with('\n') {
            tracing::warn!(path = %path.display(), "ignoring torn trailing record");
            break;
        }
        let l = line.trim_end();
        let parsed = l
            .split_once(',')
            .and_then(|(ms, v)| Some((ms.parse::<i64>().ok()?, v.parse::<f64>().ok()?)));
        match parsed {
            Some((ms, value)) => rows.push(ValueRow {
                timestamp: ts_from_millis(ms),
                value,
            }),
            None => {
                return Err(RepositoryError::Io(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("bad value log line `{l}` in {}", path.display()),
                )))
            }
        }
    }
    Ok(rows)
}
