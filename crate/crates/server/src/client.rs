//! Thin async client for the REST service, used by the CLI.

use reqwest::{Method, StatusCode};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {msg}")]
    Transport { url: String, msg: String },
    #[error("HTTP {status}: {message}")]
    Status { status: StatusCode, message: String },
    #[error("unexpected response: {0}")]
    Body(String),
}

pub struct ApiClient {
    http: reqwest::Client,
    base: String,
}

impl ApiClient {
    pub fn new(base: &str) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.trim_end_matches('/').to_string(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn send(&self, req: reqwest::RequestBuilder, url: &str) -> Result<reqwest::Response, ClientError> {
        let resp = req.send().await.map_err(|e| ClientError::Transport {
            url: url.to_string(),
            msg: e.to_string(),
        })?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| v.get("error").and_then(Value::as_str).map(String::from))
            .unwrap_or(text);
        Err(ClientError::Status { status, message })
    }

    fn request(&self, method: Method, path: &str, query: &[(String, String)]) -> (reqwest::RequestBuilder, String) {
        let url = format!("{}{}", self.base, path);
        (self.http.request(method, &url).query(query), url)
    }

    pub async fn json(&self, method: Method, path: &str, query: &[(String, String)]) -> Result<Value, ClientError> {
        let (req, url) = self.request(method, path, query);
        let resp = self.send(req, &url).await?;
        resp.json().await.map_err(|e| ClientError::Body(e.to_string()))
    }

    pub async fn json_body<B: Serialize + ?Sized>(&self, method: Method, path: &str, body: &B) -> Result<Value, ClientError> {
        let (req, url) = self.request(method, path, &[]);
        let resp = self.send(req.json(body), &url).await?;
        resp.json().await.map_err(|e| ClientError::Body(e.to_string()))
    }

    pub async fn bytes_body(&self, method: Method, path: &str, body: Vec<u8>) -> Result<Value, ClientError> {
        let (req, url) = self.request(method, path, &[]);
        let req = req.header(reqwest::header::CONTENT_TYPE, "application/zip").body(body);
        let resp = self.send(req, &url).await?;
        resp.json().await.map_err(|e| ClientError::Body(e.to_string()))
    }

    pub async fn text(&self, path: &str, query: &[(String, String)]) -> Result<String, ClientError> {
        let (req, url) = self.request(Method::GET, path, query);
        let resp = self.send(req, &url).await?;
        resp.text().await.map_err(|e| ClientError::Body(e.to_string()))
    }
}

/// Percent-encodes one path segment (stream and model ids may contain `/`).
pub fn segment(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}
