//! The `wtstream` command line: offline tools (train, evaluate, lagscan,
//! synth), REST wrappers (model, engine, predict, streams, replay, weather)
//! and the two servers (serve, fixture-server).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reqwest::Method;
use serde_json::{json, Value};
use thiserror::Error;
use wtstream_core::ann::{grid_search, train, AnnConfig, AnnError, AnnModel, GridCell, GridSearchSpace, Sample};
use wtstream_core::clock::{Clock, ManualClock, SystemClock};
use wtstream_core::metrics::{evaluate, select_lag, LagScan, MetricsError, MetricsReport, Series};
use wtstream_core::node::{Node, NodeConfig, NodeError};
use wtstream_core::replay::{load_csv, ReplayError};
use wtstream_core::repository::{parse_csv, render_csv, RepositoryError, ValueRow};
use wtstream_core::scheduler::{EngineRecord, ExecutorKind, PmaArchive, PmaManifest, DEFAULT_MODEL_FILE, PMA_VERSION};
use wtstream_core::synthetic::{lagged_pair, wt_rows, Weather, WeatherConfig};
use wtstream_core::types::{ts_from_millis, DataPoint, Timestamp};
use wtstream_core::windowing::{Aggregate, Cadence, WindowRule};

use crate::api::{self, AppState, ServerClock};
use crate::client::{segment, ApiClient, ClientError};
use crate::ingest::{spawn_tcp_ingest, DEFAULT_INGEST_PORT};
use crate::weather::{fixture_router, CategoryMap, Fixture, WeatherClient, WeatherError, WeatherFeed, WeatherRequest};

pub const DEFAULT_API_PORT: u16 = 8080;
pub const DEFAULT_FIXTURE_PORT: u16 = 8090;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Csv { path: PathBuf, msg: String },
    #[error(transparent)]
    Ann(#[from] AnnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Weather(#[from] WeatherError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("server error: {0}")]
    Server(std::io::Error),
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "wtstream", version, about = "Streaming water-temperature prediction node")]
pub struct Cli {
    /// Service host to talk to (or bind, for the servers).
    #[arg(long, global = true, default_value = "127.0.0.1")]
    pub host: String,
    /// Service port (default 8080; 8090 for fixture-server).
    #[arg(long, global = true)]
    pub port: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on a TM,TM_lag,RF,WT table and write a model archive.
    Train(TrainArgs),
    /// Compare observed and predicted series (timestamp,value files).
    Evaluate { obs: PathBuf, pred: PathBuf },
    /// Scan delays 0..=kmax and report the best-correlated one.
    Lagscan(LagscanArgs),
    /// Write synthetic TM/RF streams, a training table and a lag-pair table.
    Synth(SynthArgs),
    /// Manage prediction models on the service.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Manage external simulation engines on the service.
    #[command(subcommand)]
    Engine(EngineCmd),
    /// Set the prediction mode, start, stop or run a model.
    #[command(subcommand)]
    Predict(PredictCmd),
    /// Inspect and manage streams.
    #[command(subcommand)]
    Streams(StreamsCmd),
    /// Replay timestamp,value files into the service.
    Replay(ReplayArgs),
    /// Fetch one weather observation and push it into the service.
    Weather(WeatherArgs),
    /// Run the REST service and the TCP ingest listener.
    Serve(ServeArgs),
    /// Run the deterministic weather fixture service.
    FixtureServer {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// CSV with columns TM, TM_lag, RF, WT (any order, header required).
    pub csv: PathBuf,
    #[arg(long, default_value = "model.pma")]
    pub out: PathBuf,
    /// Hidden nodes; searched over 5..=25 when omitted.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Learning rate; searched over 0.05..=1.00 when omitted.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    /// Leading rows used for training; the rest are the test set.
    #[arg(long, default_value_t = 790)]
    pub train_len: usize,
    #[arg(long, default_value = "wt")]
    pub mid: String,
    #[arg(long, default_value = "wt.pred")]
    pub output_stream: String,
    #[arg(long, default_value = "tm")]
    pub tm_stream: String,
    #[arg(long, default_value = "rf")]
    pub rf_stream: String,
    #[arg(long, default_value_t = 17)]
    pub lag_hours: i64,
}

#[derive(Debug, Args)]
pub struct LagscanArgs {
    /// CSV with a header; the target and driver columns default to the first two.
    pub csv: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub kmax: usize,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub driver: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Hours of TM/RF stream data.
    #[arg(long, default_value_t = 48)]
    pub hours: usize,
    /// Rows in the training table.
    #[arg(long, default_value_t = 1126)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First stream timestamp (RFC 3339 or YYYYMMDDHHMM).
    #[arg(long, default_value = "2012-12-06T00:00:00Z")]
    pub start: String,
}

#[derive(Debug, Subcommand)]
pub enum ModelCmd {
    List,
    Get { mid: String },
    Register { pma: PathBuf },
    Delete { mid: String },
}

#[derive(Debug, Subcommand)]
pub enum EngineCmd {
    List,
    Get {
        eid: String,
    },
    /// The template must contain {input_file} and {output_file}.
    Register {
        eid: String,
        template: String,
        #[arg(long)]
        timeout_secs: Option<u64>,
    },
    Delete {
        eid: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum PredictCmd {
    /// 1 on-demand, 2 time-scheduled, 3 data-driven, 4 event-driven.
    Mode {
        mode: u8,
        #[arg(long)]
        mid: Option<String>,
        #[arg(long)]
        time: Option<String>,
        /// Seconds between scheduled runs.
        #[arg(long)]
        interval: Option<i64>,
        #[arg(long)]
        count: Option<u64>,
        #[arg(long)]
        end: Option<String>,
        /// Trigger streams for mode 3, comma separated.
        #[arg(long)]
        streams: Option<String>,
        /// Trigger notification rule for mode 4.
        #[arg(long)]
        rule: Option<String>,
    },
    Start {
        #[arg(long)]
        mid: Option<String>,
    },
    Stop {
        #[arg(long)]
        mid: Option<String>,
    },
    Run {
        #[arg(long)]
        mid: Option<String>,
        #[arg(long)]
        as_of: Option<String>,
    },
    Status {
        #[arg(long)]
        mid: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum StreamsCmd {
    List,
    Get {
        id: String,
    },
    Create {
        id: String,
        #[arg(long, default_value = "sensor")]
        kind: String,
        #[arg(long)]
        sensor: Option<String>,
        #[arg(long)]
        variable: Option<String>,
    },
    Delete {
        id: String,
    },
    Values {
        id: String,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    Download {
        id: String,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// `file.csv=stream_id` pairs, or plain paths together with --stream.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub stream: Option<String>,
    /// Data time per wall time; `inf` sends as fast as possible.
    #[arg(long, default_value = "inf")]
    pub speedup: f64,
}

#[derive(Debug, Args)]
pub struct WeatherArgs {
    /// Service URL (a bare http://host:port gets the fixture path).
    #[arg(long)]
    pub endpoint: String,
    #[arg(long)]
    pub base_date: String,
    #[arg(long)]
    pub base_time: String,
    #[arg(long, default_value_t = 1)]
    pub nx: u32,
    #[arg(long, default_value_t = 1)]
    pub ny: u32,
    /// CATEGORY=stream pairs; defaults to TM=tm and RF=rf.
    #[arg(long = "map")]
    pub map: Vec<String>,
    /// Print the points instead of sending them.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockKind {
    /// Wall time, with a background ticker.
    Wall,
    /// Time advances with ingested data batches.
    Data,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_INGEST_PORT)]
    pub ingest_port: u16,
    #[arg(long, value_enum, default_value_t = ClockKind::Wall)]
    pub clock: ClockKind,
    /// Ticker period for the wall clock, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    pub tick_ms: u64,
}

// ---- offline tools ----------------------------------------------------------

/// Input rules for the water-temperature model: air temperature averaged
/// over the last hour (slot 0), rainfall over the last hour (slot 1) and
/// air temperature over the hour `lag_hours` earlier (slot 2).
pub fn default_manifest(mid: &str, output_stream: &str, tm: &str, rf: &str, lag_hours: i64) -> PmaManifest {
    let rule = |id: &str, stream: &str, lag_h: i64, idx: usize| WindowRule {
        rule_id: id.into(),
        source_stream: stream.into(),
        aggregate: Aggregate::Avg,
        window_secs: 3600,
        lag_secs: lag_h * 3600,
        cadence: Cadence::PerPoint,
        input_index: idx,
    };
    PmaManifest {
        pma_version: PMA_VERSION,
        mid: mid.into(),
        name: "water temperature".into(),
        executor: ExecutorKind::NativeAnn,
        engine: None,
        command_template: None,
        model_file: DEFAULT_MODEL_FILE.into(),
        inputs: vec![
            rule("tm", tm, 0, 0),
            rule("rf", rf, 0, 1),
            rule(&format!("tm{lag_hours}"), tm, lag_hours, 2),
        ],
        output_stream: output_stream.into(),
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let csv_err = |msg: String| CliError::Csv {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| csv_err(format!("line {}: `{f}` is not a finite number", i + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| CliError::Csv {
            path: path.to_path_buf(),
            msg: format!("missing column `{name}` (have {})", header.join(",")),
        })
}

/// Reads a TM,TM_lag,RF,WT table into samples with inputs in model slot
/// order (TM, RF, TM_lag).
pub fn read_training_table(path: &Path) -> Result<Vec<Sample>> {
    let (header, rows) = read_table(path)?;
    let idx = ["TM", "RF", "TM_lag", "WT"]
        .iter()
        .map(|c| column(&header, c, path))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows
        .iter()
        .map(|r| Sample::new(vec![r[idx[0]], r[idx[1]], r[idx[2]]], r[idx[3]]))
        .collect())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: AnnModel,
    pub grid: Option<Vec<GridCell>>,
    pub test: MetricsReport,
}

/// Trains on the first `train_len` rows and reports test metrics on the
/// rest. Missing hyperparameters are grid-searched against the last fifth
/// of the training rows, then the chosen network is retrained on all of them.
pub fn train_model(
    samples: &[Sample],
    train_len: usize,
    hidden: Option<usize>,
    lr: Option<f64>,
    seed: u64,
    epochs: usize,
) -> Result<TrainOutcome> {
    if train_len == 0 || train_len >= samples.len() {
        return Err(CliError::Usage(format!(
            "train length {train_len} must be between 1 and {} (rows)",
            samples.len().saturating_sub(1)
        )));
    }
    let (train_set, test_set) = samples.split_at(train_len);
    let base = AnnConfig {
        n_inputs: samples[0].inputs.len(),
        n_hidden: hidden.unwrap_or(10),
        learning_rate: lr.unwrap_or(0.55),
        max_epochs: epochs,
        seed,
        ..AnnConfig::default()
    };
    let (config, grid) = if hidden.is_some() && lr.is_some() {
        (base, None)
    } else {
        let defaults = GridSearchSpace::default();
        let space = GridSearchSpace {
            hidden_candidates: hidden.map_or(defaults.hidden_candidates, |h| vec![h]),
            lr_candidates: lr.map_or(defaults.lr_candidates, |r| vec![r]),
        };
        let cut = train_set.len() - (train_set.len() / 5).max(1);
        let result = grid_search(&space, &base, &train_set[..cut], &train_set[cut..])?;
        let chosen = AnnConfig {
            seed,
            ..result.best.clone()
        };
        (chosen, Some(result.table))
    };
    let model = train(&config, train_set)?;
    let obs = Series::new(test_set.iter().map(|s| s.target).collect())?;
    let pred = Series::new(
        test_set
            .iter()
            .map(|s| model.predict(&s.inputs))
            .collect::<std::result::Result<Vec<_>, _>>()?,
    )?;
    let test = evaluate(&obs, &pred)?;
    Ok(TrainOutcome { model, grid, test })
}

fn run_train(args: &TrainArgs) -> Result<Value> {
    let samples = read_training_table(&args.csv)?;
    let outcome = train_model(&samples, args.train_len, args.hidden, args.lr, args.seed, args.epochs)?;
    let manifest = default_manifest(&args.mid, &args.output_stream, &args.tm_stream, &args.rf_stream, args.lag_hours);
    let archive = PmaArchive::native(manifest, &outcome.model);
    std::fs::write(&args.out, archive.to_zip()).map_err(io_err(&args.out))?;
    Ok(json!({
        "archive": args.out,
        "mid": args.mid,
        "n_hidden": outcome.model.config.n_hidden,
        "learning_rate": outcome.model.config.learning_rate,
        "epochs_run": outcome.model.training_history.len().saturating_sub(1),
        "grid_cells": outcome.grid.as_ref().map(Vec::len),
        "test": outcome.test,
    }))
}

fn read_series_file(path: &Path) -> Result<Vec<ValueRow>> {
    let doc = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_csv(&doc).map_err(|e| match e {
        RepositoryError::Csv { line, msg } => CliError::Csv {
            path: path.to_path_buf(),
            msg: format!("line {line}: {msg}"),
        },
        other => CliError::Csv {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    })
}

/// Pairs the two files on timestamp and computes the metrics.
pub fn evaluate_files(obs: &Path, pred: &Path) -> Result<MetricsReport> {
    let o = read_series_file(obs)?;
    let p = read_series_file(pred)?;
    let by_ts: std::collections::HashMap<Timestamp, f64> = p.iter().map(|r| (r.timestamp, r.value)).collect();
    let (ov, pv): (Vec<f64>, Vec<f64>) = o
        .iter()
        .filter_map(|r| by_ts.get(&r.timestamp).map(|&v| (r.value, v)))
        .unzip();
    if ov.is_empty() {
        return Err(CliError::Usage("the files share no timestamps".into()));
    }
    Ok(evaluate(&Series::new(ov)?, &Series::new(pv)?)?)
}

pub fn lagscan_file(args: &LagscanArgs) -> Result<LagScan> {
    let (header, rows) = read_table(&args.csv)?;
    if header.len() < 2 {
        return Err(CliError::Csv {
            path: args.csv.clone(),
            msg: "need at least two columns".into(),
        });
    }
    let t = match &args.target {
        Some(n) => column(&header, n, &args.csv)?,
        None => 0,
    };
    let d = match &args.driver {
        Some(n) => column(&header, n, &args.csv)?,
        None => 1,
    };
    let y = Series::new(rows.iter().map(|r| r[t]).collect())?;
    let x = Series::new(rows.iter().map(|r| r[d]).collect())?;
    Ok(select_lag(&y, &x, args.kmax)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

pub fn synth(args: &SynthArgs) -> Result<Value> {
    let start = api::parse_instant(&args.start).map_err(CliError::Usage)?;
    std::fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let weather = Weather::generate(&WeatherConfig::new(args.hours, args.seed, start));
    let rows = |v: &[f64]| -> Vec<ValueRow> {
        v.iter()
            .enumerate()
            .map(|(i, &value)| ValueRow {
                timestamp: weather.timestamp(i),
                value,
            })
            .collect()
    };
    write_file(&args.out_dir.join("tm.csv"), &render_csv(&rows(&weather.tm)))?;
    write_file(&args.out_dir.join("rf.csv"), &render_csv(&rows(&weather.rf)))?;

    let table_weather = Weather::generate(&WeatherConfig::new(args.rows + 17, args.seed, start));
    let mut table = String::from("TM,TM_lag,RF,WT\n");
    for r in wt_rows(&table_weather, 17, 0.5, args.seed ^ 0x5eed) {
        table.push_str(&format!("{:?},{:?},{:?},{:?}\n", r.tm, r.tm_lag, r.rf, r.wt));
    }
    write_file(&args.out_dir.join("dataset.csv"), &table)?;

    let (y, x) = lagged_pair(1000, 17, 0.1, args.seed);
    let mut pair = String::from("y,x\n");
    for (a, b) in y.iter().zip(&x) {
        pair.push_str(&format!("{a:?},{b:?}\n"));
    }
    write_file(&args.out_dir.join("lag.csv"), &pair)?;
    Ok(json!({
        "out_dir": args.out_dir,
        "files": ["tm.csv", "rf.csv", "dataset.csv", "lag.csv"],
        "hours": args.hours,
        "rows": args.rows,
    }))
}

// ---- REST wrappers ----------------------------------------------------------

fn q(pairs: &[(&str, Option<String>)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
}

async fn model_cmd(c: &ApiClient, cmd: &ModelCmd) -> Result<Value> {
    Ok(match cmd {
        ModelCmd::List => c.json(Method::GET, "/node/models", &[]).await?,
        ModelCmd::Get { mid } => c.json(Method::GET, &format!("/node/models/{}", segment(mid)), &[]).await?,
        ModelCmd::Register { pma } => {
            let bytes = std::fs::read(pma).map_err(io_err(pma))?;
            c.bytes_body(Method::PUT, "/node/models", bytes).await?
        }
        ModelCmd::Delete { mid } => c.json(Method::DELETE, &format!("/node/models/{}", segment(mid)), &[]).await?,
    })
}

async fn engine_cmd(c: &ApiClient, cmd: &EngineCmd) -> Result<Value> {
    Ok(match cmd {
        EngineCmd::List => c.json(Method::GET, "/node/engines", &[]).await?,
        EngineCmd::Get { eid } => c.json(Method::GET, &format!("/node/engines/{}", segment(eid)), &[]).await?,
        EngineCmd::Register {
            eid,
            template,
            timeout_secs,
        } => {
            let mut record = EngineRecord::external(eid, template);
            record.timeout_secs = *timeout_secs;
            c.json_body(Method::PUT, "/node/engines", &record).await?
        }
        EngineCmd::Delete { eid } => c.json(Method::DELETE, &format!("/node/engines/{}", segment(eid)), &[]).await?,
    })
}

async fn predict_cmd(c: &ApiClient, cmd: &PredictCmd) -> Result<Value> {
    let query = match cmd {
        PredictCmd::Mode {
            mode,
            mid,
            time,
            interval,
            count,
            end,
            streams,
            rule,
        } => q(&[
            ("mid", mid.clone()),
            ("mode", Some(mode.to_string())),
            ("time", time.clone()),
            ("interval", interval.map(|i| i.to_string())),
            ("count", count.map(|n| n.to_string())),
            ("end", end.clone()),
            ("streams", streams.clone()),
            ("rule", rule.clone()),
        ]),
        PredictCmd::Start { mid } => q(&[("mid", mid.clone()), ("action", Some("start".into()))]),
        PredictCmd::Stop { mid } => q(&[("mid", mid.clone()), ("action", Some("stop".into()))]),
        PredictCmd::Run { mid, as_of } => q(&[
            ("mid", mid.clone()),
            ("action", Some("run".into())),
            ("as_of", as_of.clone()),
        ]),
        PredictCmd::Status { mid } => return Ok(c.json(Method::GET, "/node/prediction", &q(&[("mid", mid.clone())])).await?),
    };
    Ok(c.json(Method::POST, "/node/prediction", &query).await?)
}

async fn streams_cmd(c: &ApiClient, cmd: &StreamsCmd) -> Result<Option<Value>> {
    let path = |id: &str, rest: &str| format!("/streams/{}{rest}", segment(id));
    Ok(Some(match cmd {
        StreamsCmd::List => c.json(Method::GET, "/streams", &[]).await?,
        StreamsCmd::Get { id } => c.json(Method::GET, &path(id, ""), &[]).await?,
        StreamsCmd::Create {
            id,
            kind,
            sensor,
            variable,
        } => {
            let body = json!({ "stream_id": id, "kind": kind, "sensor_id": sensor, "variable_id": variable });
            c.json_body(Method::POST, "/streams", &body).await?
        }
        StreamsCmd::Delete { id } => c.json(Method::DELETE, &path(id, ""), &[]).await?,
        StreamsCmd::Values { id, from, to, limit } => {
            let query = q(&[
                ("from", from.clone()),
                ("to", to.clone()),
                ("limit", limit.map(|l| l.to_string())),
            ]);
            c.json(Method::GET, &path(id, "/values"), &query).await?
        }
        StreamsCmd::Download { id, from, to, out } => {
            let doc = c
                .text(&path(id, "/download"), &q(&[("from", from.clone()), ("to", to.clone())]))
                .await?;
            match out {
                Some(p) => write_file(p, &doc)?,
                None => print!("{doc}"),
            }
            return Ok(None);
        }
    }))
}

/// Loads replay inputs and merges them by timestamp (stable).
pub fn load_replay_inputs(args: &ReplayArgs) -> Result<Vec<DataPoint>> {
    let mut points = Vec::new();
    for input in &args.inputs {
        let (path, stream) = match (input.rsplit_once('='), &args.stream) {
            (Some((p, s)), _) => (PathBuf::from(p), s.to_string()),
            (None, Some(s)) => (PathBuf::from(input), s.clone()),
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "`{input}`: give FILE=STREAM or pass --stream"
                )))
            }
        };
        points.extend(load_csv(&path, &stream)?);
    }
    points.sort_by_key(|p| p.timestamp);
    Ok(points)
}

async fn replay_cmd(c: &ApiClient, args: &ReplayArgs) -> Result<Value> {
    if args.speedup.is_nan() || args.speedup <= 0.0 {
        return Err(CliError::Usage(format!("speedup must be positive, got {}", args.speedup)));
    }
    let points = load_replay_inputs(args)?;
    let mut published = 0usize;
    let mut predictions = 0u64;
    let mut prev: Option<Timestamp> = None;
    let mut i = 0;
    while i < points.len() {
        let t = points[i].timestamp;
        let mut j = i;
        while j < points.len() && points[j].timestamp == t {
            j += 1;
        }
        if let (Some(p), true) = (prev, args.speedup.is_finite()) {
            let gap = (t - p).to_std().unwrap_or_default();
            tokio::time::sleep(gap.div_f64(args.speedup)).await;
        }
        let resp = c.json_body(Method::POST, "/ingest", &points[i..j]).await?;
        published += j - i;
        predictions += resp.get("predictions").and_then(Value::as_u64).unwrap_or(0);
        prev = Some(t);
        i = j;
    }
    Ok(json!({
        "published": published,
        "predictions": predictions,
        "first": points.first().map(|p| p.timestamp),
        "last": points.last().map(|p| p.timestamp),
    }))
}

async fn weather_cmd(c: &ApiClient, args: &WeatherArgs) -> Result<Value> {
    let map = if args.map.is_empty() {
        CategoryMap::default()
    } else {
        CategoryMap::parse(&args.map)?
    };
    let feed = WeatherFeed::new(WeatherClient::new(&args.endpoint), map);
    let req = WeatherRequest::new(&args.base_date, &args.base_time, args.nx, args.ny);
    let points = feed.fetch_points(&req).await?;
    if !args.dry_run && !points.is_empty() {
        c.json_body(Method::POST, "/ingest", &points).await?;
    }
    Ok(json!({ "points": points, "stats": feed.stats(), "sent": !args.dry_run }))
}

// ---- servers ------------------------------------------------------------------

async fn bind(host: &str, port: u16) -> Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind((host, port)).await.map_err(CliError::Server)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

/// Opens the node for `serve`: wall clock or a data clock starting at the
/// Unix epoch.
pub fn open_node(data_dir: Option<PathBuf>, clock: ClockKind) -> Result<(Arc<Node>, ServerClock)> {
    let (node_clock, server_clock): (Arc<dyn Clock>, ServerClock) = match clock {
        ClockKind::Wall => (Arc::new(SystemClock), ServerClock::Wall),
        ClockKind::Data => {
            let c = ManualClock::new(ts_from_millis(0));
            (Arc::new(c.clone()), ServerClock::Data(c))
        }
    };
    let config = NodeConfig {
        data_dir,
        ..Default::default()
    };
    Ok((Arc::new(Node::open(config, node_clock)?), server_clock))
}

async fn serve(host: &str, port: u16, args: &ServeArgs) -> Result<()> {
    let (node, clock) = open_node(args.data_dir.clone(), args.clock)?;
    let ingest_addr: SocketAddr = format!("{host}:{}", args.ingest_port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad ingest address: {e}")))?;
    let (ingest_local, _ingest) = spawn_tcp_ingest(ingest_addr, node.clone()).await.map_err(CliError::Server)?;
    if matches!(clock, ServerClock::Wall) {
        let node = node.clone();
        let period = Duration::from_millis(args.tick_ms.max(10));
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(period);
            loop {
                ticker.tick().await;
                let node = node.clone();
                let _ = tokio::task::spawn_blocking(move || node.tick()).await;
            }
        });
    }
    let listener = bind(host, port).await?;
    let local = listener.local_addr().map_err(CliError::Server)?;
    tracing::info!(http = %local, ingest = %ingest_local, "serving");
    eprintln!("wtstream: REST on http://{local}, ingest on tcp://{ingest_local}");
    axum::serve(listener, api::router(AppState::new(node, clock)))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(CliError::Server)
}

async fn fixture_server(host: &str, port: u16, seed: u64) -> Result<()> {
    let listener = bind(host, port).await?;
    let local = listener.local_addr().map_err(CliError::Server)?;
    eprintln!("wtstream: weather fixture on http://{local}/weather (seed {seed})");
    axum::serve(listener, fixture_router(Arc::new(Fixture::new(seed))))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(CliError::Server)
}

/// Runs one command. Results are printed to stdout as JSON (or text for
/// lagscan and downloads).
pub async fn run(cli: Cli) -> Result<()> {
    let api_port = cli.port.unwrap_or(DEFAULT_API_PORT);
    let client = || ApiClient::new(&format!("http://{}:{api_port}", cli.host));
    let out = match &cli.command {
        Command::Train(a) => {
            let a = a.clone();
            Some(tokio::task::spawn_blocking(move || run_train(&a)).await.expect("training thread")?)
        }
        Command::Evaluate { obs, pred } => Some(json!(evaluate_files(obs, pred)?)),
        Command::Lagscan(a) => {
            let scan = lagscan_file(a)?;
            println!("k\tcorrelation");
            for (k, r) in scan.correlations.iter().enumerate() {
                println!("{k}\t{r:.6}");
            }
            println!("chosen lag: {}", scan.chosen_lag);
            None
        }
        Command::Synth(a) => Some(synth(a)?),
        Command::Model(m) => Some(model_cmd(&client(), m).await?),
        Command::Engine(e) => Some(engine_cmd(&client(), e).await?),
        Command::Predict(p) => Some(predict_cmd(&client(), p).await?),
        Command::Streams(s) => streams_cmd(&client(), s).await?,
        Command::Replay(r) => Some(replay_cmd(&client(), r).await?),
        Command::Weather(w) => Some(weather_cmd(&client(), w).await?),
        Command::Serve(s) => {
            serve(&cli.host, api_port, s).await?;
            None
        }
        Command::FixtureServer { seed } => {
            fixture_server(&cli.host, cli.port.unwrap_or(DEFAULT_FIXTURE_PORT), *seed).await?;
            None
        }
    };
    if let Some(v) = out {
        println!("{}", serde_json::to_string_pretty(&v).expect("JSON value serializes"));
    }
    Ok(())
}
