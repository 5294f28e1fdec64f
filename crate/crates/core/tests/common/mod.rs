#![allow(dead_code)]

use std::sync::Arc;

use chrono::Duration;
use wtstream_core::ann::{AnnConfig, AnnModel};
use wtstream_core::clock::ManualClock;
use wtstream_core::node::Node;
use wtstream_core::scheduler::{ExecutorKind, PmaArchive, PmaManifest, DEFAULT_MODEL_FILE};
use wtstream_core::stream_core::StreamKind;
use wtstream_core::types::{parse_ts, DataPoint, Timestamp};
use wtstream_core::windowing::{Aggregate, Cadence, WindowRule};

pub fn t0() -> Timestamp {
    parse_ts("2012-12-06T00:00:00Z").unwrap()
}

pub fn h(n: i64) -> Timestamp {
    t0() + Duration::hours(n)
}

/// In-memory node on a manual clock with `tm` and `rf` sensor streams.
pub fn node() -> (Node, ManualClock) {
    let clock = ManualClock::new(t0());
    let node = Node::in_memory(Arc::new(clock.clone())).unwrap();
    node.create_stream("tm", StreamKind::Sensor, None, None).unwrap();
    node.create_stream("rf", StreamKind::Sensor, None, None).unwrap();
    (node, clock)
}

pub fn rule(id: &str, stream: &str, lag_h: i64, idx: usize) -> WindowRule {
    WindowRule {
        rule_id: id.into(),
        source_stream: stream.into(),
        aggregate: Aggregate::Avg,
        window_secs: 3600,
        lag_secs: lag_h * 3600,
        cadence: Cadence::PerPoint,
        input_index: idx,
    }
}

/// Air temperature now (slot 0), rainfall (slot 1), air temperature 17 h
/// earlier (slot 2).
pub fn manifest(mid: &str, output: &str) -> PmaManifest {
    PmaManifest {
        pma_version: 1,
        mid: mid.into(),
        name: format!("{mid} model"),
        executor: ExecutorKind::NativeAnn,
        engine: None,
        command_template: None,
        model_file: DEFAULT_MODEL_FILE.into(),
        inputs: vec![rule("tm", "tm", 0, 0), rule("tm17", "tm", 17, 2), rule("rf", "rf", 0, 1)],
        output_stream: output.into(),
    }
}

pub fn model(seed: u64) -> AnnModel {
    let mut m = AnnModel::init(AnnConfig::default(), seed).unwrap();
    m.input_scaler.mean = vec![17.0, 2.0, 16.5];
    m.input_scaler.std = vec![5.0, 4.0, 5.5];
    m
}

pub fn native_pma(mid: &str, output: &str, model: &AnnModel) -> Vec<u8> {
    PmaArchive::native(manifest(mid, output), model).to_zip()
}

/// Plain-text weights: `ni nh`, scaler means, scaler stds, one line per
/// hidden row (inputs then bias), then the output row (hidden then bias).
pub fn text_weights(m: &AnnModel) -> String {
    let line = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    let mut s = format!("{} {}\n", m.config.n_inputs, m.config.n_hidden);
    s.push_str(&line(&m.input_scaler.mean));
    s.push('\n');
    s.push_str(&line(&m.input_scaler.std));
    s.push('\n');
    for row in &m.w_hidden {
        s.push_str(&line(row));
        s.push('\n');
    }
    s.push_str(&line(&m.w_out));
    s.push('\n');
    s
}

/// An awk reimplementation of the forward pass, reading `model/weights.txt`
/// and the input CSV.
pub const AWK_FORWARD: &str = r#"
FNR == NR {
    if (FNR == 1) { ni = $1; nh = $2 }
    else if (FNR == 2) { for (i = 1; i <= ni; i++) mu[i] = $i }
    else if (FNR == 3) { for (i = 1; i <= ni; i++) sd[i] = $i }
    else if (FNR - 3 <= nh) { r = FNR - 3; for (i = 1; i <= ni + 1; i++) wh[r, i] = $i }
    else { for (i = 1; i <= nh + 1; i++) wo[i] = $i }
    next
}
FNR > 1 { x[$1 + 1] = ($2 - mu[$1 + 1]) / sd[$1 + 1] }
END {
    y = 0
    for (r = 1; r <= nh; r++) {
        z = 0
        for (i = 1; i <= ni; i++) z += wh[r, i] * x[i]
        z += wh[r, ni + 1]
        y += wo[r] * (1 / (1 + exp(-z)))
    }
    y += wo[nh + 1]
    printf "%.17g\n", y
}
"#;

pub fn awk_pma(mid: &str, output: &str, model: &AnnModel) -> Vec<u8> {
    let mut m = manifest(mid, output);
    m.executor = ExecutorKind::External;
    m.command_template =
        Some("awk -F'[ ,]' -f {model_dir}/model/forward.awk {model_dir}/model/weights.txt {input_file} > {output_file}".into());
    PmaArchive {
        manifest: m,
        files: Default::default(),
    }
    .with_file("model/forward.awk", AWK_FORWARD)
    .with_file("model/weights.txt", text_weights(model))
    .to_zip()
}

/// Hourly points on `tm` and `rf` for hours `from..to`.
pub fn feed(node: &Node, from: i64, to: i64) {
    for i in from..to {
        node.ingest(DataPoint::new("tm", h(i), 15.0 + (i % 7) as f64)).unwrap();
        node.ingest(DataPoint::new("rf", h(i), (i % 3) as f64)).unwrap();
    }
}
