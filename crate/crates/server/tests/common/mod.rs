#![allow(dead_code)]

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::Value;
use tower::ServiceExt;
use wtstream_core::ann::{AnnConfig, AnnModel};
use wtstream_core::clock::ManualClock;
use wtstream_core::node::Node;
use wtstream_core::scheduler::PmaArchive;
use wtstream_core::stream_core::StreamKind;
use wtstream_core::types::{parse_ts, Timestamp};
use wtstream_server::api::{router, AppState, ServerClock};
use wtstream_server::cli::default_manifest;

pub fn t0() -> Timestamp {
    parse_ts("2012-12-06T00:00:00Z").unwrap()
}

pub fn h(n: i64) -> Timestamp {
    t0() + chrono::Duration::hours(n)
}

/// A node on a manual clock with sensor streams `tm` and `rf`.
pub fn node() -> (Arc<Node>, ManualClock) {
    let clock = ManualClock::new(t0());
    let node = Arc::new(Node::in_memory(Arc::new(clock.clone())).unwrap());
    node.create_stream("tm", StreamKind::Sensor, None, None).unwrap();
    node.create_stream("rf", StreamKind::Sensor, None, None).unwrap();
    (node, clock)
}

/// The service over a fresh node with a data clock.
pub fn app() -> (Router, Arc<Node>, ManualClock) {
    let (node, clock) = node();
    let state = AppState::new(node.clone(), ServerClock::Data(clock.clone()));
    (router(state), node, clock)
}

pub fn model(seed: u64) -> AnnModel {
    let mut m = AnnModel::init(AnnConfig::default(), seed).unwrap();
    m.input_scaler.mean = vec![17.0, 2.0, 16.5];
    m.input_scaler.std = vec![5.0, 4.0, 5.5];
    m
}

pub fn pma(mid: &str, output: &str, seed: u64) -> Vec<u8> {
    PmaArchive::native(default_manifest(mid, output, "tm", "rf", 17), &model(seed)).to_zip()
}

pub async fn call(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, Body::empty()).await
}

pub async fn post(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Body::empty()).await
}
