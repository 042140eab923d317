//! HTTP backends speaking the JSON wire protocol:
//!
//! - `POST /v1/generate` `{"image_ref", "prompt"}` -> `{"text"}`
//! - `POST /v1/predict` `{"image_ref", "label_set"}` -> `{"labels", "scores"?}`
//! - `POST /v1/embed` `{"image_ref"}` -> `{"vector"}`
//!
//! Transport failures are retried up to the configured count; a non-200
//! status or an unexpected body is a protocol error and is not retried.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use gsco_core::backend::{BackendError, Embed, Generate, Predict};
use gsco_core::{EmbeddingVector, LabelSet, SpecialistPrediction};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use url::Url;

use super::{check_embedding, prediction_from_names};

/// Counting semaphore bounding in-flight requests per backend.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// One attempted request, kept for auditing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub path: String,
    pub request: String,
    pub attempt: u32,
    pub status: Option<u16>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RemoteSettings {
    pub endpoint: Url,
    pub timeout: Duration,
    pub retries: u32,
    pub max_concurrency: usize,
    pub headers: BTreeMap<String, String>,
}

pub struct RemoteClient {
    id: String,
    settings: RemoteSettings,
    agent: ureq::Agent,
    permits: Permits,
    audit: Mutex<Vec<AuditEntry>>,
}

fn is_transport(e: &ureq::Error) -> bool {
    matches!(
        e,
        ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed
            | ureq::Error::BodyStalled
    )
}

impl RemoteClient {
    pub fn new(id: impl Into<String>, settings: RemoteSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits::new(settings.max_concurrency);
        RemoteClient { id: id.into(), settings, agent, permits, audit: Mutex::new(Vec::new()) }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn protocol(&self, message: impl Into<String>) -> BackendError {
        BackendError::Protocol { backend: self.id.clone(), message: message.into() }
    }

    fn transport(&self, message: impl Into<String>) -> BackendError {
        BackendError::Transport { backend: self.id.clone(), message: message.into() }
    }

    fn record(&self, entry: AuditEntry) {
        log::debug!(
            target: "gsco::audit",
            "{} POST {} attempt {} status {:?} {} ms: {}",
            self.id,
            entry.path,
            entry.attempt,
            entry.status,
            entry.latency_ms,
            entry.request
        );
        self.audit.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = self.settings.endpoint.join(path).map_err(|e| self.protocol(format!("bad endpoint path {path}: {e}")))?;
        let request = serde_json::to_string(body).expect("request serializes");
        let _permit = self.permits.acquire();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let mut req = self.agent.post(url.as_str()).header("content-type", "application/json");
            for (k, v) in &self.settings.headers {
                req = req.header(k.as_str(), v.as_str());
            }
            let sent = req.send(request.as_bytes());
            let latency_ms = started.elapsed().as_millis() as u64;
            let entry = |status| AuditEntry { path: path.to_string(), request: request.clone(), attempt, status, latency_ms };
            match sent {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    self.record(entry(Some(status)));
                    if status != 200 {
                        return Err(self.protocol(format!("{path} answered HTTP {status}")));
                    }
                    return resp.body_mut().read_json::<Resp>().map_err(|e| {
                        if is_transport(&e) {
                            self.transport(format!("{path}: reading body: {e}"))
                        } else {
                            self.protocol(format!("{path}: malformed response: {e}"))
                        }
                    });
                }
                Err(e) if is_transport(&e) => {
                    self.record(entry(None));
                    if attempt > self.settings.retries {
                        return Err(self.transport(format!("{path}: {e} (after {attempt} attempts)")));
                    }
                    log::warn!("{}: {path} failed ({e}), retrying", self.id);
                }
                Err(e) => {
                    self.record(entry(None));
                    return Err(self.protocol(format!("{path}: {e}")));
                }
            }
        }
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    image_ref: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    image_ref: &'a str,
    label_set: &'a [String],
}

#[derive(Deserialize)]
struct PredictResponse {
    labels: Vec<String>,
    #[serde(default)]
    scores: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    image_ref: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f32>,
}

pub struct RemoteGenerator(pub RemoteClient);

impl Generate for RemoteGenerator {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn generate(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError> {
        let r: GenerateResponse = self.0.post("v1/generate", &GenerateRequest { image_ref, prompt })?;
        Ok(r.text)
    }
}

pub struct RemoteSpecialist(pub RemoteClient);

impl Predict for RemoteSpecialist {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn predict(&self, image_ref: &str, labels: &LabelSet) -> Result<SpecialistPrediction, BackendError> {
        let r: PredictResponse = self.0.post("v1/predict", &PredictRequest { image_ref, label_set: labels.labels() })?;
        prediction_from_names(self.0.id(), &r.labels, r.scores, labels)
    }
}

pub struct RemoteEmbedder {
    pub client: RemoteClient,
    pub dimension: usize,
}

impl Embed for RemoteEmbedder {
    fn id(&self) -> &str {
        self.client.id()
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError> {
        let r: EmbedResponse = self.client.post("v1/embed", &EmbedRequest { image_ref })?;
        check_embedding(self.client.id(), self.dimension, r.vector)
    }
}
