// SPDX-License-Identifier: Apache-2.0

//! Chat-completions access in live, record and replay modes, plus lexical
//! extraction of LO codes from model replies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::prompting::{LOFormat, PromptStrategy};
use crate::taxonomy::{parse_lo_code, LOCode};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("network error after {attempts} attempt(s): {last}")]
    NetworkError { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("no cassette entry for fingerprint {0}")]
    CassetteMiss(RequestFingerprint),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("invalid model config: {0}")]
    ConfigInvalid(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: PathBuf, message: String },
}

fn default_temperature() -> f64 {
    0.9
}

fn default_top_p() -> f64 {
    1.0
}

fn default_max_retries() -> u32 {
    3
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_name: String,
    #[serde(default)]
    pub endpoint_url: String,
    /// Name of the environment variable holding the API key.
    #[serde(default, alias = "api_key_ref")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    /// Upper bound on request attempts, first try included.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl ModelConfig {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            endpoint_url: String::new(),
            api_key_env: String::new(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::ConfigInvalid(m));
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.max_retries == 0 {
            return bad("max_retries must be at least 1".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// SHA-256 over the key-sorted JSON rendering of a request.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestFingerprint(String);

impl RequestFingerprint {
    /// `sample` is folded in only when non-zero, so single-sample runs
    /// fingerprint exactly (model, temperature, top_p, prompt).
    pub fn compute(cfg: &ModelConfig, prompt: &str, sample: u32) -> Self {
        let mut canonical = BTreeMap::new();
        canonical.insert("model", serde_json::json!(cfg.model_name));
        canonical.insert("prompt", serde_json::json!(prompt));
        canonical.insert("temperature", serde_json::json!(cfg.temperature));
        canonical.insert("top_p", serde_json::json!(cfg.top_p));
        if sample > 0 {
            canonical.insert("sample", serde_json::json!(sample));
        }
        let bytes = serde_json::to_vec(&canonical).expect("fingerprint input serializes");
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RequestFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Record,
    Replay,
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            _ => Err(format!("unknown backend mode {s:?}")),
        }
    }
}

/// Fingerprint → reply map persisted as pretty, key-sorted JSON.
///
/// Writes go through one mutex and are flushed to disk by atomic rename.
#[derive(Debug)]
pub struct Cassette {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, String>>,
}

impl Cassette {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Self {
        Self {
            path: None,
            entries: Mutex::new(entries),
        }
    }

    /// Opens a cassette file. A missing file yields an empty cassette bound
    /// to `path`, which is what record mode wants.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let entries = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| GatewayError::Cassette {
                path: path.clone(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => {
                return Err(GatewayError::Cassette {
                    path,
                    message: e.to_string(),
                })
            }
        };
        Ok(Self {
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, fp: &RequestFingerprint) -> Option<String> {
        self.entries.lock().unwrap().get(fp.as_str()).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        self.entries.lock().unwrap().clone()
    }

    pub fn insert(&self, fp: &RequestFingerprint, reply: &str) -> Result<(), GatewayError> {
        let mut entries = self.entries.lock().unwrap();
        entries.insert(fp.as_str().to_owned(), reply.to_owned());
        if let Some(path) = &self.path {
            write_atomic(path, render_cassette(&entries).as_bytes()).map_err(|e| GatewayError::Cassette {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        render_cassette(&self.entries.lock().unwrap())
    }
}

fn render_cassette(entries: &BTreeMap<String, String>) -> String {
    let mut s = serde_json::to_string_pretty(entries).expect("cassette serializes");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Transport-level failure: connection refused, timeout, reset.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Minimal HTTP surface the gateway needs. Swappable for tests.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

/// Blocking reqwest client. Must not be used from inside an async runtime.
pub struct ReqwestTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        Self {
            client: OnceLock::new(),
        }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let client = self.client.get_or_init(reqwest::blocking::Client::new);
        let response = client
            .post(url)
            .bearer_auth(bearer)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .timeout(timeout)
            .send()
            .map_err(|e| TransportError(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Request body for the chat-completions endpoint.
pub fn request_body(cfg: &ModelConfig, prompt: &str) -> serde_json::Value {
    serde_json::json!({
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
        "messages": [{"role": "user", "content": prompt}],
    })
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_reply(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(serde_json::Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub fingerprint: RequestFingerprint,
}

pub struct Gateway {
    cfg: ModelConfig,
    mode: BackendMode,
    cassette: Arc<Cassette>,
    transport: Arc<dyn Transport>,
    api_key: Option<String>,
    backoff: Duration,
}

impl Gateway {
    /// Resolves the API key from the environment variable named in `cfg`.
    pub fn new(
        cfg: ModelConfig,
        mode: BackendMode,
        cassette: Arc<Cassette>,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let api_key = (!cfg.api_key_env.is_empty())
            .then(|| std::env::var(&cfg.api_key_env).ok())
            .flatten();
        Ok(Self {
            cfg,
            mode,
            cassette,
            transport,
            api_key,
            backoff: Duration::from_millis(500),
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Base delay of the exponential backoff between attempts.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn mode(&self) -> BackendMode {
        self.mode
    }

    pub fn complete(&self, prompt: &str, sample: u32) -> Result<Completion, GatewayError> {
        let fingerprint = RequestFingerprint::compute(&self.cfg, prompt, sample);
        let text = match self.mode {
            BackendMode::Replay => self
                .cassette
                .get(&fingerprint)
                .ok_or_else(|| GatewayError::CassetteMiss(fingerprint.clone()))?,
            BackendMode::Live => self.call_endpoint(prompt)?,
            BackendMode::Record => {
                let text = self.call_endpoint(prompt)?;
                self.cassette.insert(&fingerprint, &text)?;
                text
            }
        };
        Ok(Completion { text, fingerprint })
    }

    fn call_endpoint(&self, prompt: &str) -> Result<String, GatewayError> {
        let key = self.api_key.as_deref().ok_or_else(|| {
            GatewayError::AuthError(format!("environment variable {:?} is not set", self.cfg.api_key_env))
        })?;
        if self.cfg.endpoint_url.is_empty() {
            return Err(GatewayError::ConfigInvalid("endpoint_url is empty".into()));
        }
        let body = request_body(&self.cfg, prompt);
        let mut last = String::new();
        for attempt in 0..self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self
                .transport
                .post_json(&self.cfg.endpoint_url, key, &body, self.cfg.timeout())
            {
                Err(e) => last = e.0,
                Ok(reply) => match reply.status {
                    200..=299 => return extract_reply(&reply.body),
                    401 | 403 => return Err(GatewayError::AuthError(format!("HTTP {}", reply.status))),
                    429 | 500..=599 => last = format!("HTTP {}", reply.status),
                    status => {
                        return Err(GatewayError::HttpStatus {
                            status,
                            body: reply.body,
                        })
                    }
                },
            }
            log::warn!("{}: attempt {} failed: {last}", self.cfg.model_name, attempt + 1);
        }
        Err(GatewayError::NetworkError {
            attempts: self.cfg.max_retries,
            last,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    NotInSubset,
    Malformed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedCode {
    pub token: String,
    pub reason: DropReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    /// Allowed codes in order of first mention.
    pub predicted: Vec<LOCode>,
    pub dropped: Vec<DroppedCode>,
}

fn candidate_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[A-Za-z]+-[A-Za-z0-9]+-[0-9]+\b").expect("valid regex"))
}

/// Extracts code-shaped tokens from `raw` and keeps those in `allowed`.
///
/// Negated mentions ("ME-W-1 is not relevant") are still extracted.
pub fn parse_prediction(raw: &str, allowed: &BTreeSet<LOCode>) -> ParsedPrediction {
    let mut out = ParsedPrediction::default();
    for m in candidate_pattern().find_iter(raw) {
        let token = m.as_str();
        let reason = match parse_lo_code(token) {
            Ok(code) if allowed.contains(&code) => {
                if !out.predicted.contains(&code) {
                    out.predicted.push(code);
                }
                continue;
            }
            Ok(_) => DropReason::NotInSubset,
            Err(_) => DropReason::Malformed,
        };
        if !out.dropped.iter().any(|d| d.token == token) {
            out.dropped.push(DroppedCode {
                token: token.to_owned(),
                reason,
            });
        }
    }
    out
}

/// One model reply with its extracted labels and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub strategy: PromptStrategy,
    pub format: LOFormat,
    pub model_name: String,
    pub sample: u32,
    pub fingerprint: RequestFingerprint,
    pub raw_text: String,
    pub predicted: Vec<LOCode>,
    pub dropped_codes: Vec<DroppedCode>,
    pub latency_ms: u64,
}
