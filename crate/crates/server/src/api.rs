//! The REST service.
//!
//! Model and engine management live under `/node/models` and
//! `/node/engines`; prediction control is `POST /node/prediction` with the
//! schedule encoded in the query string (`mode`, `time`, `interval`, ...) or
//! an `action` of `start`, `stop` or `run`. Streams, values, window rules and
//! notification rules have their own resources. Every handler is a thin
//! adapter over one [`Node`] operation run on the blocking pool.
//!
//! Errors are JSON `{"error": "..."}` with 400 for invalid input, 404 for
//! unknown ids, 409 for duplicates and state conflicts and 500 for executor
//! and storage faults.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{NaiveDateTime, TimeZone, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wtstream_core::clock::{Clock, ManualClock};
use wtstream_core::node::{DispatchReport, Node, NodeError};
use wtstream_core::notification::{NotificationError, NotificationRule};
use wtstream_core::repository::{MetadataEntity, RepositoryError, SearchFilter, ValueRow};
use wtstream_core::scheduler::{EngineRecord, Schedule, SchedulerError, Terminator};
use wtstream_core::stream_core::{BrokerError, IngestError, StreamKind};
use wtstream_core::types::{parse_ts, DataPoint, Timestamp};
use wtstream_core::windowing::{WindowError, WindowRule};

/// How the service learns the current time.
#[derive(Clone)]
pub enum ServerClock {
    /// Wall time; a background ticker fires due cycles.
    Wall,
    /// Data time: the clock only moves when an ingest batch or an explicit
    /// `POST /node/advance` says an instant is complete.
    Data(ManualClock),
}

pub struct AppState {
    pub node: Arc<Node>,
    pub clock: ServerClock,
}

impl AppState {
    pub fn new(node: Arc<Node>, clock: ServerClock) -> Arc<Self> {
        Arc::new(Self { node, clock })
    }

    /// Moves a data clock to `to` and releases everything due by then.
    fn advance(&self, to: Timestamp) -> Result<DispatchReport, ApiError> {
        match &self.clock {
            ServerClock::Data(c) => {
                c.advance_to(to);
                Ok(self.node.advance_to(c.now()))
            }
            ServerClock::Wall => Err(ApiError::new(
                StatusCode::CONFLICT,
                "the service runs on wall-clock time; advance is only available with a data clock",
            )),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn broker_status(e: &BrokerError) -> StatusCode {
    match e {
        BrokerError::DuplicateStream(_) | BrokerError::WrongWriter { .. } => StatusCode::CONFLICT,
        BrokerError::UnknownStream(_) => StatusCode::NOT_FOUND,
        BrokerError::InvalidId(_) | BrokerError::NonFiniteValue(_) => StatusCode::BAD_REQUEST,
    }
}

fn repository_status(e: &RepositoryError) -> StatusCode {
    use RepositoryError::*;
    match e {
        UnknownStream(_) | DanglingReference { .. } => StatusCode::NOT_FOUND,
        DuplicateStream(_) | ClosedStream(_) => StatusCode::CONFLICT,
        BadRange(..) | Invalid(_) | StreamMismatch { .. } | NonFiniteValue(_) | Csv { .. } => StatusCode::BAD_REQUEST,
        Io(_) | Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn window_status(e: &WindowError) -> StatusCode {
    match e {
        WindowError::UnknownStream(_) | WindowError::UnknownRule(_) => StatusCode::NOT_FOUND,
        WindowError::DuplicateRule(_) => StatusCode::CONFLICT,
        WindowError::DuplicateIndex(_) | WindowError::BadWindow(_) => StatusCode::BAD_REQUEST,
    }
}

fn notification_status(e: &NotificationError) -> StatusCode {
    match e {
        NotificationError::UnknownStream(_) | NotificationError::UnknownRule(_) => StatusCode::NOT_FOUND,
        NotificationError::DuplicateRule(_) => StatusCode::CONFLICT,
        NotificationError::BadRule(_) => StatusCode::BAD_REQUEST,
    }
}

fn scheduler_status(e: &SchedulerError) -> StatusCode {
    use SchedulerError::*;
    match e {
        BadArchive(_) | InvalidEngine(_) | InvalidSchedule(_) => StatusCode::BAD_REQUEST,
        UnknownModel(_) | UnknownEngine(_) => StatusCode::NOT_FOUND,
        DuplicateModel(_)
        | DuplicateEngine(_)
        | EngineInUse { .. }
        | AlreadyRunning(_)
        | NotRunning(_)
        | IncompleteInputs { .. }
        | StaleCycle { .. } => StatusCode::CONFLICT,
        ExecutorFailure { .. } | Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        Window(e) => window_status(e),
        Broker(e) => broker_status(e),
        Repository(e) => repository_status(e),
    }
}

/// The HTTP status a node error maps to.
pub fn status_of(e: &NodeError) -> StatusCode {
    match e {
        NodeError::Broker(e) => broker_status(e),
        NodeError::Repository(e) => repository_status(e),
        NodeError::Window(e) => window_status(e),
        NodeError::Notification(e) => notification_status(e),
        NodeError::Scheduler(e) => scheduler_status(e),
        NodeError::Ingest(IngestError::Parse(_)) => StatusCode::BAD_REQUEST,
        NodeError::Ingest(IngestError::Broker(e)) => broker_status(e),
        NodeError::StreamInUse { .. } => StatusCode::CONFLICT,
        NodeError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        Self::new(status_of(&e), e.to_string())
    }
}

macro_rules! via_node {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                NodeError::from(e).into()
            }
        }
    )*};
}
via_node!(SchedulerError, RepositoryError, WindowError, NotificationError, BrokerError);

type ApiResult<T> = Result<T, ApiError>;

/// Runs a node operation on the blocking pool.
async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker panicked: {e}")))?
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Accepts RFC 3339 (`2012-12-06T11:00:00Z`) or the compact
/// `YYYYMMDDHHMM[SS]` form used by the weather service, read as UTC.
pub fn parse_instant(s: &str) -> Result<Timestamp, String> {
    let s = s.trim();
    if let Ok(t) = parse_ts(s) {
        return Ok(t);
    }
    let fmt = match s.len() {
        12 => "%Y%m%d%H%M",
        14 => "%Y%m%d%H%M%S",
        _ => return Err(format!("unparseable instant `{s}`")),
    };
    NaiveDateTime::parse_from_str(s, fmt)
        .map(|n| Utc.from_utc_datetime(&n))
        .map_err(|e| format!("unparseable instant `{s}`: {e}"))
}

fn instant_param(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<Timestamp>> {
    q.get(key)
        .map(|s| parse_instant(s).map_err(|e| ApiError::bad_request(format!("{key}: {e}"))))
        .transpose()
}

fn int_param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    q.get(key)
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ApiError::bad_request(format!("{key}: expected an integer, got `{s}`")))
        })
        .transpose()
}

fn list_param(q: &HashMap<String, String>, key: &str) -> Vec<String> {
    q.get(key)
        .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/node/models", put(register_model).get(list_models))
        .route("/node/models/{mid}", get(get_model).delete(delete_model))
        .route("/node/engines", put(register_engine).get(list_engines))
        .route("/node/engines/{eid}", get(get_engine).delete(delete_engine))
        .route("/node/prediction", post(prediction).get(prediction_status))
        .route("/node/advance", post(advance))
        .route("/node/status", get(status))
        .route("/streams", get(list_streams).post(create_stream))
        .route("/streams/{id}", get(get_stream).delete(delete_stream))
        .route("/streams/{id}/values", get(get_values).post(post_values))
        .route("/streams/{id}/download", get(download))
        .route("/ingest", post(ingest))
        .route("/metadata", get(list_metadata).put(put_metadata))
        .route("/rules", get(list_rules).post(create_rule))
        .route("/rules/{*id}", get(get_rule).delete(delete_rule))
        .route("/notifications", get(list_events))
        .route("/notifications/rules", get(list_notification_rules).post(create_notification_rule))
        .route(
            "/notifications/rules/{id}",
            get(get_notification_rule).delete(delete_notification_rule),
        )
        .with_state(state)
}

// ---- models and engines ---------------------------------------------------

async fn register_model(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let mid = blocking(&s, move |s| Ok(s.node.scheduler().register_pma(&body)?)).await?;
    Ok(Json(json!({ "mid": mid })))
}

async fn list_models(State(s): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    blocking(&s, |s| {
        let sched = s.node.scheduler();
        let infos = sched
            .models()
            .into_iter()
            .map(|m| sched.model(&m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Json(json!(infos)))
    })
    .await
}

async fn get_model(State(s): State<Arc<AppState>>, Path(mid): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| Ok(Json(json!(s.node.scheduler().model(&mid)?)))).await
}

async fn delete_model(State(s): State<Arc<AppState>>, Path(mid): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        s.node.scheduler().delete_model(&mid)?;
        Ok(Json(json!({ "mid": mid })))
    })
    .await
}

async fn register_engine(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let engine: EngineRecord = parse_body(&body)?;
    blocking(&s, move |s| {
        let eid = engine.eid.clone();
        s.node.scheduler().register_engine(engine)?;
        Ok(Json(json!({ "eid": eid })))
    })
    .await
}

async fn list_engines(State(s): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    blocking(&s, |s| Ok(Json(json!(s.node.scheduler().engines())))).await
}

async fn get_engine(State(s): State<Arc<AppState>>, Path(eid): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| match s.node.scheduler().engine(&eid) {
        Some(e) => Ok(Json(json!(e))),
        None => Err(SchedulerError::UnknownEngine(eid).into()),
    })
    .await
}

async fn delete_engine(State(s): State<Arc<AppState>>, Path(eid): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        s.node.scheduler().delete_engine(&eid)?;
        Ok(Json(json!({ "eid": eid })))
    })
    .await
}

// ---- prediction control ---------------------------------------------------

/// Builds the schedule a `mode=` query describes. `now` is the default start
/// of a time-scheduled run.
pub fn schedule_from_query(q: &HashMap<String, String>, now: Timestamp) -> ApiResult<Schedule> {
    let mode: u8 = int_param(q, "mode")?.ok_or_else(|| ApiError::bad_request("missing mode"))?;
    match mode {
        1 => Ok(Schedule::OnDemand),
        2 => {
            let interval_secs: i64 =
                int_param(q, "interval")?.ok_or_else(|| ApiError::bad_request("mode 2 needs an interval (seconds)"))?;
            let count: Option<u64> = int_param(q, "count")?;
            let end = instant_param(q, "end")?;
            let terminator = match (count, end) {
                (Some(_), Some(_)) => return Err(ApiError::bad_request("give at most one of count and end")),
                (Some(n), None) => Terminator::Count(n),
                (None, Some(t)) => Terminator::End(t),
                (None, None) => Terminator::Unbounded,
            };
            Ok(Schedule::TimeScheduled {
                start: instant_param(q, "time")?.unwrap_or(now),
                interval_secs,
                terminator,
            })
        }
        3 => Ok(Schedule::DataDriven {
            trigger_streams: list_param(q, "streams"),
        }),
        4 => Ok(Schedule::EventDriven {
            trigger_rule: q
                .get("rule")
                .cloned()
                .ok_or_else(|| ApiError::bad_request("mode 4 needs a rule"))?,
        }),
        other => Err(ApiError::bad_request(format!("unknown mode {other}; expected 1-4"))),
    }
}

/// The model a prediction request addresses: `mid` when given, otherwise
/// the only registered model.
fn target_model(node: &Node, q: &HashMap<String, String>) -> ApiResult<String> {
    if let Some(mid) = q.get("mid") {
        return Ok(mid.clone());
    }
    let models = node.scheduler().models();
    match models.as_slice() {
        [only] => Ok(only.clone()),
        [] => Err(ApiError::new(StatusCode::NOT_FOUND, "no model registered")),
        _ => Err(ApiError::bad_request("several models are registered; pass mid")),
    }
}

async fn prediction(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        let node = &s.node;
        let sched = node.scheduler();
        let mid = target_model(node, &q)?;
        let action = q.get("action").map(|a| a.trim().to_ascii_lowercase());
        if !q.contains_key("mode") && action.is_none() {
            return Err(ApiError::bad_request("expected mode=... or action=start|stop|run"));
        }
        if q.contains_key("mode") {
            let schedule = schedule_from_query(&q, node.clock().now())?;
            sched.set_mode(&mid, schedule)?;
        }
        match action.as_deref() {
            None => {}
            Some("start") => sched.start(&mid)?,
            Some("stop") => sched.stop(&mid)?,
            Some("run") => {
                let as_of = instant_param(&q, "as_of")?.unwrap_or_else(|| node.clock().now());
                let report = node.run_once(&mid, as_of)?;
                let record = report.predictions().next().cloned();
                return Ok(Json(json!(record)));
            }
            Some(other) => return Err(ApiError::bad_request(format!("unknown action `{other}`"))),
        }
        Ok(Json(json!(sched.model(&mid)?)))
    })
    .await
}

async fn prediction_status(
    State(s): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        let mid = target_model(&s.node, &q)?;
        Ok(Json(json!(s.node.scheduler().model(&mid)?)))
    })
    .await
}

#[derive(Serialize)]
struct DispatchSummary {
    aggregates: usize,
    predictions: usize,
    failures: Vec<String>,
    events: usize,
}

impl From<&DispatchReport> for DispatchSummary {
    fn from(r: &DispatchReport) -> Self {
        Self {
            aggregates: r.aggregates,
            predictions: r.predictions().count(),
            failures: r
                .cycles
                .iter()
                .filter_map(|c| c.result.as_ref().err().map(|e| e.to_string()))
                .collect(),
            events: r.events.len(),
        }
    }
}

async fn advance(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let to = instant_param(&q, "to")?.ok_or_else(|| ApiError::bad_request("missing to"))?;
    blocking(&s, move |s| {
        let report = s.advance(to)?;
        Ok(Json(json!(DispatchSummary::from(&report))))
    })
    .await
}

async fn status(State(s): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    blocking(&s, |s| {
        Ok(Json(json!({
            "clock": match s.clock { ServerClock::Wall => "wall", ServerClock::Data(_) => "data" },
            "now": s.node.clock().now(),
            "models": s.node.scheduler().models(),
            "streams": s.node.streams().len(),
            "late_dropped": s.node.windowing().total_late_dropped(),
        })))
    })
    .await
}

// ---- streams and values ---------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateStream {
    pub stream_id: String,
    #[serde(default = "sensor_kind")]
    pub kind: StreamKind,
    #[serde(default)]
    pub sensor_id: Option<String>,
    #[serde(default)]
    pub variable_id: Option<String>,
}

fn sensor_kind() -> StreamKind {
    StreamKind::Sensor
}

async fn list_streams(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        let filter = SearchFilter {
            variable_id: q.get("variable_id").cloned(),
            site_id: q.get("site_id").cloned(),
            from: instant_param(&q, "from")?,
            to: instant_param(&q, "to")?,
        };
        if filter == SearchFilter::default() {
            return Ok(Json(json!(s.node.streams())));
        }
        let hits = s.node.repository().search(&filter)?;
        let summaries = hits
            .iter()
            .map(|r| s.node.stream(&r.stream_id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Json(json!(summaries)))
    })
    .await
}

async fn create_stream(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: CreateStream = parse_body(&body)?;
    blocking(&s, move |s| {
        s.node
            .create_stream(&req.stream_id, req.kind, req.sensor_id.as_deref(), req.variable_id.as_deref())?;
        Ok(Json(json!(s.node.stream(&req.stream_id)?)))
    })
    .await
}

async fn get_stream(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| Ok(Json(json!(s.node.stream(&id)?)))).await
}

async fn delete_stream(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        s.node.delete_stream(&id)?;
        Ok(Json(json!({ "stream_id": id })))
    })
    .await
}

fn range(q: &HashMap<String, String>) -> ApiResult<(Option<Timestamp>, Option<Timestamp>)> {
    Ok((instant_param(q, "from")?, instant_param(q, "to")?))
}

async fn get_values(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<ValueRow>>> {
    blocking(&s, move |s| {
        let (from, to) = range(&q)?;
        let limit: Option<usize> = int_param(&q, "limit")?;
        Ok(Json(s.node.repository().retrieve(&id, from, to, limit)?))
    })
    .await
}

/// Ingests `[{"timestamp": .., "value": ..}, ...]` into one stream.
async fn post_values(State(s): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let rows: Vec<ValueRow> = parse_body(&body)?;
    let points = rows.into_iter().map(|r| DataPoint::new(&id, r.timestamp, r.value)).collect();
    ingest_batch(&s, points).await
}

async fn download(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    blocking(&s, move |s| {
        let (from, to) = range(&q)?;
        let doc = s.node.repository().download(&id, from, to)?;
        Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], doc).into_response())
    })
    .await
}

/// Ingests a batch of points (any streams). With a data clock the batch is
/// taken to complete its newest instant, so the node is advanced to it.
async fn ingest(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let points: Vec<DataPoint> = parse_body(&body)?;
    ingest_batch(&s, points).await
}

async fn ingest_batch(s: &Arc<AppState>, points: Vec<DataPoint>) -> ApiResult<Json<Value>> {
    blocking(s, move |s| {
        let mut total = DispatchReport::default();
        let accepted = points.len();
        let newest = points.iter().map(|p| p.timestamp).max();
        for p in points {
            total.absorb(s.node.ingest(p)?);
        }
        if let (ServerClock::Data(_), Some(t)) = (&s.clock, newest) {
            total.absorb(s.advance(t)?);
        }
        let mut body = json!(DispatchSummary::from(&total));
        body["accepted"] = json!(accepted);
        Ok(Json(body))
    })
    .await
}

async fn list_metadata(State(s): State<Arc<AppState>>) -> ApiResult<Json<Vec<MetadataEntity>>> {
    blocking(&s, |s| Ok(Json(s.node.repository().metadata()))).await
}

async fn put_metadata(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let entity: MetadataEntity = parse_body(&body)?;
    blocking(&s, move |s| {
        let id = s.node.repository().upsert_metadata(entity)?;
        Ok(Json(json!({ "id": id })))
    })
    .await
}

// ---- rules and notifications ----------------------------------------------

async fn list_rules(State(s): State<Arc<AppState>>) -> ApiResult<Json<Vec<WindowRule>>> {
    blocking(&s, |s| Ok(Json(s.node.windowing().rules()))).await
}

async fn create_rule(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let rule: WindowRule = parse_body(&body)?;
    blocking(&s, move |s| {
        let id = s.node.register_window_rule(rule)?;
        Ok(Json(json!({ "rule_id": id })))
    })
    .await
}

async fn get_rule(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        let rule = s.node.windowing().rule(&id).ok_or(WindowError::UnknownRule(id.clone()))?;
        let latest = s.node.windowing().latest(&id)?;
        Ok(Json(json!({ "rule": rule, "latest": latest })))
    })
    .await
}

async fn delete_rule(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        if s.node.scheduler().models().iter().any(|m| id.starts_with(&format!("{m}/"))) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("rule `{id}` belongs to a registered model; delete the model instead"),
            ));
        }
        s.node.windowing().remove_rule(&id)?;
        Ok(Json(json!({ "rule_id": id })))
    })
    .await
}

async fn list_events(State(s): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    blocking(&s, |s| Ok(Json(json!(s.node.events())))).await
}

async fn list_notification_rules(State(s): State<Arc<AppState>>) -> ApiResult<Json<Vec<NotificationRule>>> {
    blocking(&s, |s| Ok(Json(s.node.notifications().rules()))).await
}

async fn create_notification_rule(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let rule: NotificationRule = parse_body(&body)?;
    blocking(&s, move |s| {
        let id = s.node.register_notification_rule(rule)?;
        Ok(Json(json!({ "rule_id": id })))
    })
    .await
}

async fn get_notification_rule(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| match s.node.notifications().rule(&id) {
        Some(r) => Ok(Json(json!(r))),
        None => Err(NotificationError::UnknownRule(id).into()),
    })
    .await
}

async fn delete_notification_rule(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |s| {
        s.node.notifications().remove_rule(&id)?;
        Ok(Json(json!({ "rule_id": id })))
    })
    .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instants() {
        let a = parse_instant("2012-12-06T11:00:00Z").unwrap();
        assert_eq!(parse_instant("201212061100").unwrap(), a);
        assert_eq!(parse_instant("20121206110000").unwrap(), a);
        assert!(parse_instant("2012-12-06").is_err());
    }

    #[test]
    fn schedules_from_queries() {
        let now = parse_instant("201212060000").unwrap();
        let q = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        assert_eq!(schedule_from_query(&q(&[("mode", "1")]), now).unwrap(), Schedule::OnDemand);
        assert_eq!(
            schedule_from_query(&q(&[("mode", "2"), ("time", "201212061100"), ("interval", "3600"), ("count", "3")]), now)
                .unwrap(),
            Schedule::TimeScheduled {
                start: parse_instant("201212061100").unwrap(),
                interval_secs: 3600,
                terminator: Terminator::Count(3),
            }
        );
        assert_eq!(
            schedule_from_query(&q(&[("mode", "3"), ("streams", "tm, rf")]), now).unwrap(),
            Schedule::DataDriven {
                trigger_streams: vec!["tm".into(), "rf".into()]
            }
        );
        for bad in [vec![("mode", "2")], vec![("mode", "9")], vec![("mode", "x")], vec![("mode", "4")]] {
            let e = schedule_from_query(&q(&bad), now).unwrap_err();
            assert_eq!(e.status, StatusCode::BAD_REQUEST);
        }
    }
}
