//! Client for the weather observation service, plus a deterministic fixture
//! implementation of the same contract.
//!
//! Requests carry `base_date` (YYYYMMDD), `base_time` (HHMM), `nx` and `ny`
//! as query parameters, with optional `numOfRows` / `pageNo` passthrough.
//! Responses use the nested service envelope:
//!
//! ```json
//! {"response": {"header": {"resultCode": "0", "resultMsg": "OK"},
//!               "body": {"numOfRows": 10, "pageNo": 1, "totalCount": 10,
//!                        "items": {"item": [{"category": "TM", "obsrValue": -1.0}]}}}}
//! ```
//!
//! Observation times are read as UTC.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{NaiveDate, NaiveTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;
use wtstream_core::node::{Node, NodeError};
use wtstream_core::types::{DataPoint, Timestamp};

/// Path the fixture serves and the client appends to a bare host endpoint.
pub const WEATHER_PATH: &str = "/weather";

#[derive(Debug, Error)]
pub enum WeatherError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service returned code {code}: {msg}")]
    BadStatus { code: String, msg: String },
    #[error("unparseable response: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeatherRequest {
    pub base_date: String,
    pub base_time: String,
    pub nx: u32,
    pub ny: u32,
}

impl WeatherRequest {
    pub fn new(base_date: &str, base_time: &str, nx: u32, ny: u32) -> Self {
        Self {
            base_date: base_date.into(),
            base_time: base_time.into(),
            nx,
            ny,
        }
    }

    /// The request for the hour containing `t`.
    pub fn at(t: Timestamp, nx: u32, ny: u32) -> Self {
        Self::new(&t.format("%Y%m%d").to_string(), &t.format("%H00").to_string(), nx, ny)
    }

    pub fn validate(&self) -> Result<(), WeatherError> {
        self.timestamp()?;
        if self.nx < 1 || self.ny < 1 {
            return Err(WeatherError::InvalidRequest("nx and ny must be at least 1".into()));
        }
        Ok(())
    }

    /// Observation instant named by `base_date` + `base_time`.
    pub fn timestamp(&self) -> Result<Timestamp, WeatherError> {
        let bad = |what: &str, v: &str| WeatherError::InvalidRequest(format!("{what} `{v}`"));
        if self.base_date.len() != 8 {
            return Err(bad("base_date", &self.base_date));
        }
        if self.base_time.len() != 4 {
            return Err(bad("base_time", &self.base_time));
        }
        let d = NaiveDate::parse_from_str(&self.base_date, "%Y%m%d").map_err(|_| bad("base_date", &self.base_date))?;
        let t = NaiveTime::parse_from_str(&self.base_time, "%H%M").map_err(|_| bad("base_time", &self.base_time))?;
        Ok(Utc.from_utc_datetime(&d.and_time(t)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherItem {
    pub category: String,
    #[serde(rename = "obsrValue", deserialize_with = "number_or_string")]
    pub obsr_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeatherResponse {
    pub result_code: String,
    pub result_msg: String,
    pub num_of_rows: u32,
    pub page_no: u32,
    pub total_count: u32,
    pub items: Vec<WeatherItem>,
}

impl WeatherResponse {
    /// Checks the envelope invariants: a success code bounds the item count
    /// by `numOfRows`, and every value is finite.
    pub fn validate(&self) -> Result<(), WeatherError> {
        if self.result_code == "0" && self.items.len() > self.num_of_rows as usize {
            return Err(WeatherError::Parse(format!(
                "{} items exceed numOfRows {}",
                self.items.len(),
                self.num_of_rows
            )));
        }
        if let Some(bad) = self.items.iter().find(|i| !i.obsr_value.is_finite()) {
            return Err(WeatherError::Parse(format!("non-finite value for {}", bad.category)));
        }
        Ok(())
    }
}

// The wire envelope.

#[derive(Serialize, Deserialize)]
struct Envelope {
    response: EnvelopeResponse,
}

#[derive(Serialize, Deserialize)]
struct EnvelopeResponse {
    header: Header,
    #[serde(default)]
    body: Option<Body>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Header {
    result_code: String,
    result_msg: String,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Body {
    num_of_rows: u32,
    page_no: u32,
    total_count: u32,
    items: Items,
}

#[derive(Serialize, Deserialize)]
struct Items {
    #[serde(default)]
    item: Vec<WeatherItem>,
}

fn number_or_string<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Str(s) => s.trim().parse().map_err(serde::de::Error::custom),
    }
}

/// Parses a service document. A non-zero result code becomes
/// [`WeatherError::BadStatus`].
pub fn parse_response(doc: &[u8]) -> Result<WeatherResponse, WeatherError> {
    let env: Envelope = serde_json::from_slice(doc).map_err(|e| WeatherError::Parse(e.to_string()))?;
    let h = env.response.header;
    if h.result_code != "0" {
        return Err(WeatherError::BadStatus {
            code: h.result_code,
            msg: h.result_msg,
        });
    }
    let body = env
        .response
        .body
        .ok_or_else(|| WeatherError::Parse("success response without a body".into()))?;
    let resp = WeatherResponse {
        result_code: h.result_code,
        result_msg: h.result_msg,
        num_of_rows: body.num_of_rows,
        page_no: body.page_no,
        total_count: body.total_count,
        items: body.items.item,
    };
    resp.validate()?;
    Ok(resp)
}

fn render_response(resp: &WeatherResponse) -> serde_json::Value {
    let body = (resp.result_code == "0").then(|| Body {
        num_of_rows: resp.num_of_rows,
        page_no: resp.page_no,
        total_count: resp.total_count,
        items: Items {
            item: resp.items.clone(),
        },
    });
    serde_json::to_value(Envelope {
        response: EnvelopeResponse {
            header: Header {
                result_code: resp.result_code.clone(),
                result_msg: resp.result_msg.clone(),
            },
            body,
        },
    })
    .expect("envelope serializes")
}

/// Maps service category codes to stream ids. Unmapped categories are
/// skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap(pub BTreeMap<String, String>);

impl Default for CategoryMap {
    /// `TM` (air temperature) to stream `tm`, `RF` (rainfall) to `rf`.
    fn default() -> Self {
        Self::new().with("TM", "tm").with("RF", "rf")
    }
}

impl CategoryMap {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn with(mut self, category: &str, stream_id: &str) -> Self {
        self.0.insert(category.to_string(), stream_id.to_string());
        self
    }

    /// Parses `CAT=stream` pairs.
    pub fn parse(pairs: &[String]) -> Result<Self, WeatherError> {
        let mut map = Self::new();
        for p in pairs {
            let (c, s) = p
                .split_once('=')
                .ok_or_else(|| WeatherError::InvalidRequest(format!("expected CATEGORY=stream, got `{p}`")))?;
            map = map.with(c.trim(), s.trim());
        }
        Ok(map)
    }

    /// Converts the mapped items to points at the request's instant.
    /// Returns the points and the number of items skipped.
    pub fn points(&self, req: &WeatherRequest, resp: &WeatherResponse) -> Result<(Vec<DataPoint>, usize), WeatherError> {
        let ts = req.timestamp()?;
        let mut points = Vec::new();
        let mut skipped = 0;
        for item in &resp.items {
            match self.0.get(&item.category) {
                Some(sid) => points.push(DataPoint::new(sid, ts, item.obsr_value)),
                None => skipped += 1,
            }
        }
        Ok((points, skipped))
    }
}

pub struct WeatherClient {
    http: reqwest::Client,
    url: String,
}

impl WeatherClient {
    /// `endpoint` is either the full service URL or a bare `http://host:port`,
    /// to which the fixture path is appended.
    pub fn new(endpoint: &str) -> Self {
        let trimmed = endpoint.trim_end_matches('/');
        let url = match reqwest::Url::parse(trimmed) {
            Ok(u) if u.path() == "/" || u.path().is_empty() => format!("{trimmed}{WEATHER_PATH}"),
            _ => trimmed.to_string(),
        };
        Self {
            http: reqwest::Client::new(),
            url,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub async fn fetch(&self, req: &WeatherRequest) -> Result<WeatherResponse, WeatherError> {
        self.fetch_page(req, None, None).await
    }

    pub async fn fetch_page(
        &self,
        req: &WeatherRequest,
        num_of_rows: Option<u32>,
        page_no: Option<u32>,
    ) -> Result<WeatherResponse, WeatherError> {
        req.validate()?;
        let mut query: Vec<(&str, String)> = vec![
            ("base_date", req.base_date.clone()),
            ("base_time", req.base_time.clone()),
            ("nx", req.nx.to_string()),
            ("ny", req.ny.to_string()),
        ];
        if let Some(n) = num_of_rows {
            query.push(("numOfRows", n.to_string()));
        }
        if let Some(p) = page_no {
            query.push(("pageNo", p.to_string()));
        }
        let resp = self
            .http
            .get(&self.url)
            .query(&query)
            .send()
            .await
            .map_err(|e| WeatherError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(WeatherError::Transport(format!("HTTP {}", resp.status())));
        }
        let bytes = resp.bytes().await.map_err(|e| WeatherError::Transport(e.to_string()))?;
        parse_response(&bytes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FeedStats {
    pub fetched: u64,
    pub published: u64,
    pub ignored: u64,
}

/// Fetches observations and publishes the mapped ones into a node, counting
/// what it skips.
pub struct WeatherFeed {
    client: WeatherClient,
    map: CategoryMap,
    fetched: AtomicU64,
    published: AtomicU64,
    ignored: AtomicU64,
}

impl WeatherFeed {
    pub fn new(client: WeatherClient, map: CategoryMap) -> Self {
        Self {
            client,
            map,
            fetched: AtomicU64::new(0),
            published: AtomicU64::new(0),
            ignored: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> FeedStats {
        FeedStats {
            fetched: self.fetched.load(Ordering::Relaxed),
            published: self.published.load(Ordering::Relaxed),
            ignored: self.ignored.load(Ordering::Relaxed),
        }
    }

    /// Fetches without publishing; returns the mapped points.
    pub async fn fetch_points(&self, req: &WeatherRequest) -> Result<Vec<DataPoint>, WeatherError> {
        let resp = self.client.fetch(req).await?;
        self.fetched.fetch_add(1, Ordering::Relaxed);
        let (points, skipped) = self.map.points(req, &resp)?;
        self.ignored.fetch_add(skipped as u64, Ordering::Relaxed);
        Ok(points)
    }

    /// Fetches one observation set and ingests it into `node`.
    pub async fn poll(&self, node: &Arc<Node>, req: &WeatherRequest) -> Result<Vec<DataPoint>, FeedError> {
        let points = self.fetch_points(req).await?;
        let node = node.clone();
        let batch = points.clone();
        tokio::task::spawn_blocking(move || batch.into_iter().try_for_each(|p| node.ingest(p).map(|_| ())))
            .await
            .map_err(|e| FeedError::Worker(e.to_string()))??;
        self.published.fetch_add(points.len() as u64, Ordering::Relaxed);
        Ok(points)
    }
}

#[derive(Debug, Error)]
pub enum FeedError {
    #[error(transparent)]
    Weather(#[from] WeatherError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("ingest worker failed: {0}")]
    Worker(String),
}

// ---- fixture ---------------------------------------------------------------

/// Categories the fixture reports, in order. Only `TM` and `RF` are consumed
/// by default; the rest exercise the skip path.
pub const FIXTURE_CATEGORIES: [&str; 6] = ["TM", "RF", "LGT", "REH", "WSD", "VEC"];

/// A deterministic stand-in for the weather service: every response is a
/// pure function of the seed and the request, unless overridden.
#[derive(Debug, Clone, Default)]
pub struct Fixture {
    seed: u64,
    overrides: HashMap<(WeatherRequest, String), f64>,
    errors: HashMap<WeatherRequest, (String, String)>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    /// Pins one category's value for one request.
    pub fn with_value(mut self, req: WeatherRequest, category: &str, value: f64) -> Self {
        self.overrides.insert((req, category.to_string()), value);
        self
    }

    /// Makes one request fail with the given result code and message.
    pub fn with_error(mut self, req: WeatherRequest, code: &str, msg: &str) -> Self {
        self.errors.insert(req, (code.to_string(), msg.to_string()));
        self
    }

    fn rng(&self, req: &WeatherRequest) -> ChaCha8Rng {
        // FNV-1a over the request fields: stable across runs and platforms
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in format!("{}|{}|{}|{}", req.base_date, req.base_time, req.nx, req.ny).bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    /// All items for a request, before paging.
    pub fn items(&self, req: &WeatherRequest) -> Vec<WeatherItem> {
        let mut rng = self.rng(req);
        let hour: f64 = req.base_time.get(..2).and_then(|h| h.parse().ok()).unwrap_or(0.0);
        FIXTURE_CATEGORIES
            .iter()
            .map(|&cat| {
                let generated = match cat {
                    "TM" => {
                        let diurnal = 4.0 * (std::f64::consts::TAU * (hour - 9.0) / 24.0).sin();
                        ((12.0 + diurnal + rng.random_range(-1.5..1.5)) * 10.0).round() / 10.0
                    }
                    "RF" => {
                        let r: f64 = rng.random();
                        if r < 0.8 {
                            0.0
                        } else {
                            (rng.random_range(0.0..15.0f64) * 10.0).round() / 10.0
                        }
                    }
                    "LGT" => {
                        if rng.random_bool(0.1) {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    "REH" => rng.random_range(30..100) as f64,
                    "WSD" => (rng.random_range(0.0..8.0f64) * 10.0).round() / 10.0,
                    _ => rng.random_range(0..360) as f64,
                };
                let value = self
                    .overrides
                    .get(&(req.clone(), cat.to_string()))
                    .copied()
                    .unwrap_or(generated);
                WeatherItem {
                    category: cat.to_string(),
                    obsr_value: value,
                }
            })
            .collect()
    }

    /// The response for a request with paging (`num_of_rows` default 10,
    /// `page_no` default 1).
    pub fn respond(&self, req: &WeatherRequest, num_of_rows: Option<u32>, page_no: Option<u32>) -> WeatherResponse {
        let fail = |code: &str, msg: String| WeatherResponse {
            result_code: code.into(),
            result_msg: msg,
            num_of_rows: 0,
            page_no: 0,
            total_count: 0,
            items: Vec::new(),
        };
        if let Some((code, msg)) = self.errors.get(req) {
            return fail(code, msg.clone());
        }
        if let Err(e) = req.validate() {
            return fail("10", format!("INVALID_REQUEST_PARAMETER_ERROR: {e}"));
        }
        let rows = num_of_rows.unwrap_or(10).max(1);
        let page = page_no.unwrap_or(1).max(1);
        let all = self.items(req);
        let start = ((page - 1) as usize).saturating_mul(rows as usize).min(all.len());
        let end = (start + rows as usize).min(all.len());
        WeatherResponse {
            result_code: "0".into(),
            result_msg: "OK".into(),
            num_of_rows: rows,
            page_no: page,
            total_count: all.len() as u32,
            items: all[start..end].to_vec(),
        }
    }
}

#[derive(Deserialize)]
struct FixtureQuery {
    base_date: Option<String>,
    base_time: Option<String>,
    nx: Option<String>,
    ny: Option<String>,
    #[serde(rename = "numOfRows")]
    num_of_rows: Option<u32>,
    #[serde(rename = "pageNo")]
    page_no: Option<u32>,
}

async fn fixture_handler(State(f): State<Arc<Fixture>>, Query(q): Query<FixtureQuery>) -> Json<serde_json::Value> {
    let int = |s: &Option<String>| s.as_deref().and_then(|v| v.trim().parse::<u32>().ok()).unwrap_or(0);
    let req = WeatherRequest {
        base_date: q.base_date.clone().unwrap_or_default(),
        base_time: q.base_time.clone().unwrap_or_default(),
        nx: int(&q.nx),
        ny: int(&q.ny),
    };
    Json(render_response(&f.respond(&req, q.num_of_rows, q.page_no)))
}

pub fn fixture_router(fixture: Arc<Fixture>) -> Router {
    Router::new().route(WEATHER_PATH, get(fixture_handler)).with_state(fixture)
}
