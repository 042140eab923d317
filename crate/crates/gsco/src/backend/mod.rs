//! Backend descriptors and the objects built from them.
//!
//! A backends file is one JSON object:
//!
//! ```json
//! {
//!   "max_concurrency": 4,
//!   "generator": {"id": "gfm", "stub": {"rule": "moed-majority", "table": {"img-7": "Positive"}}},
//!   "specialists": [
//!     {"id": "vit", "stub": {"table": {"img-7": {"labels": ["Positive"], "scores": [0.91]}}}},
//!     {"id": "cnn", "remote": {"endpoint": "http://127.0.0.1:8080/", "timeout_secs": 30, "retries": 1}}
//!   ],
//!   "embedder": {"id": "enc", "dimension": 2, "stub": {"table": {"img-7": [0.1, 0.2]}}}
//! }
//! ```
//!
//! Every descriptor names exactly one transport, `stub` or `remote`.

pub mod remote;
pub mod stub;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Duration;

use gsco_core::backend::{BackendError, Embed, Generate, Predict};
use gsco_core::{EmbeddingVector, LabelSet, SpecialistPrediction};
use serde::{Deserialize, Serialize};
use url::Url;

use remote::{RemoteClient, RemoteEmbedder, RemoteGenerator, RemoteSettings, RemoteSpecialist};
use stub::{StubEmbedSpec, StubEmbedder, StubGenerateSpec, StubGenerator, StubPredictSpec, StubSpecialist};

pub const DEFAULT_MAX_CONCURRENCY: usize = 4;
pub const DEFAULT_TIMEOUT_SECS: f64 = 60.0;
pub const DEFAULT_RETRIES: u32 = 1;
pub const TIMEOUT_ENV: &str = "GSCO_HTTP_TIMEOUT_SECS";

/// Maps label names from a backend answer onto `labels`, rejecting unknown
/// names and scores outside [0, 1].
pub(crate) fn prediction_from_names(
    backend: &str,
    names: &[String],
    scores: Option<Vec<f64>>,
    labels: &LabelSet,
) -> Result<SpecialistPrediction, BackendError> {
    let protocol = |message: String| BackendError::Protocol { backend: backend.to_string(), message };
    let idx = names
        .iter()
        .map(|n| labels.find(n).ok_or_else(|| protocol(format!("label {n:?} is not in the label set"))))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = &scores {
        if s.len() != idx.len() {
            return Err(protocol(format!("{} scores for {} labels", s.len(), idx.len())));
        }
        if let Some(bad) = s.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(protocol(format!("score {bad} outside [0, 1]")));
        }
    }
    Ok(SpecialistPrediction { specialist_id: backend.to_string(), labels: idx, scores })
}

pub(crate) fn check_embedding(backend: &str, dimension: usize, v: Vec<f32>) -> Result<EmbeddingVector, BackendError> {
    let protocol = |message: String| BackendError::Protocol { backend: backend.to_string(), message };
    if v.len() != dimension {
        return Err(protocol(format!("embedding has {} components, backend declares {dimension}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(protocol("embedding contains NaN or infinity".to_string()));
    }
    Ok(EmbeddingVector::new(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Sent verbatim with every request, e.g. an authorization header.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_retries() -> u32 {
    DEFAULT_RETRIES
}

fn default_concurrency() -> usize {
    DEFAULT_MAX_CONCURRENCY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "S: Deserialize<'de>"))]
pub struct Descriptor<S> {
    pub id: String,
    /// Declared embedding width; embedders only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub: Option<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Descriptor<StubGenerateSpec>>,
    #[serde(default)]
    pub specialists: Vec<Descriptor<StubPredictSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<Descriptor<StubEmbedSpec>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read backends file {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("backends file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("backend {id}: {message}")]
    Invalid { id: String, message: String },
}

enum Transport<'a, S> {
    Stub(&'a S),
    Remote(RemoteSettings),
}

impl<S> Descriptor<S> {
    fn invalid(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { id: self.id.clone(), message: message.into() }
    }

    fn transport(&self, max_concurrency: usize, timeout_override: Option<Duration>) -> Result<Transport<'_, S>, ConfigError> {
        match (&self.stub, &self.remote) {
            (Some(s), None) => Ok(Transport::Stub(s)),
            (None, Some(r)) => {
                let mut endpoint =
                    Url::parse(&r.endpoint).map_err(|e| self.invalid(format!("endpoint {:?} is not an absolute URL: {e}", r.endpoint)))?;
                if endpoint.cannot_be_a_base() || !matches!(endpoint.scheme(), "http" | "https") {
                    return Err(self.invalid(format!("endpoint {:?} must be an http(s) URL", r.endpoint)));
                }
                if !endpoint.path().ends_with('/') {
                    let path = format!("{}/", endpoint.path());
                    endpoint.set_path(&path);
                }
                if !(r.timeout_secs.is_finite() && r.timeout_secs > 0.0) {
                    return Err(self.invalid("timeout_secs must be positive"));
                }
                Ok(Transport::Remote(RemoteSettings {
                    endpoint,
                    timeout: timeout_override.unwrap_or_else(|| Duration::from_secs_f64(r.timeout_secs)),
                    retries: r.retries,
                    max_concurrency,
                    headers: r.headers.clone(),
                }))
            }
            _ => Err(self.invalid("exactly one of \"stub\" and \"remote\" must be given")),
        }
    }
}

/// Reads the transport timeout override, if set. Unparseable or non-positive
/// values are rejected rather than ignored.
pub fn timeout_from_env() -> Result<Option<Duration>, ConfigError> {
    match std::env::var(TIMEOUT_ENV) {
        Ok(v) => match v.trim().parse::<f64>() {
            Ok(s) if s.is_finite() && s > 0.0 => Ok(Some(Duration::from_secs_f64(s))),
            _ => Err(ConfigError::Invalid { id: TIMEOUT_ENV.into(), message: format!("{v:?} is not a positive number of seconds") }),
        },
        Err(_) => Ok(None),
    }
}

/// Instantiated backends, owned for the duration of a run.
#[derive(Default)]
pub struct BackendSet {
    pub generator: Option<Box<dyn Generate>>,
    pub specialists: Vec<Box<dyn Predict>>,
    pub embedder: Option<Box<dyn Embed>>,
}

impl BackendSet {
    pub fn specialist_refs(&self) -> Vec<&dyn Predict> {
        self.specialists.iter().map(|b| b.as_ref()).collect()
    }
}

impl BackendConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: BackendConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        BackendConfig::from_json(&text)
    }

    /// Structural checks that need no network access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_concurrency == 0 {
            return Err(ConfigError::Invalid { id: "max_concurrency".into(), message: "must be at least 1".into() });
        }
        let mut ids = std::collections::HashSet::new();
        let all = self
            .generator
            .iter()
            .map(|d| (&d.id, d.dimension, d.transport(1, None).map(|_| ())))
            .chain(self.specialists.iter().map(|d| (&d.id, d.dimension, d.transport(1, None).map(|_| ()))))
            .chain(self.embedder.iter().map(|d| (&d.id, d.dimension, d.transport(1, None).map(|_| ()))));
        for (id, dimension, transport) in all {
            transport?;
            if !ids.insert(id.clone()) {
                return Err(ConfigError::Invalid { id: id.clone(), message: "backend id used twice".into() });
            }
            let is_embedder = self.embedder.as_ref().is_some_and(|e| &e.id == id);
            if dimension.is_some() != is_embedder || dimension == Some(0) {
                return Err(ConfigError::Invalid {
                    id: id.clone(),
                    message: "a positive \"dimension\" is required for the embedder and not allowed elsewhere".into(),
                });
            }
        }
        if let Some(g) = &self.generator {
            if let Some(s) = &g.stub {
                if s.rule == Some(stub::GenerateRule::Constant) && s.text.is_none() {
                    return Err(g.invalid("rule \"constant\" needs \"text\""));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, timeout_override: Option<Duration>) -> Result<BackendSet, ConfigError> {
        self.validate()?;
        let cap = self.max_concurrency;
        let generator = match &self.generator {
            None => None,
            Some(d) => Some(match d.transport(cap, timeout_override)? {
                Transport::Stub(s) => Box::new(StubGenerator::new(&d.id, s.clone())) as Box<dyn Generate>,
                Transport::Remote(r) => Box::new(RemoteGenerator(RemoteClient::new(&d.id, r))),
            }),
        };
        let specialists = self
            .specialists
            .iter()
            .map(|d| {
                Ok(match d.transport(cap, timeout_override)? {
                    Transport::Stub(s) => Box::new(StubSpecialist::new(&d.id, s.clone())) as Box<dyn Predict>,
                    Transport::Remote(r) => Box::new(RemoteSpecialist(RemoteClient::new(&d.id, r))),
                })
            })
            .collect::<Result<_, ConfigError>>()?;
        let embedder = match &self.embedder {
            None => None,
            Some(d) => {
                let dim = d.dimension.expect("validated");
                Some(match d.transport(cap, timeout_override)? {
                    Transport::Stub(s) => Box::new(StubEmbedder::new(&d.id, dim, s.clone())) as Box<dyn Embed>,
                    Transport::Remote(r) => Box::new(RemoteEmbedder { client: RemoteClient::new(&d.id, r), dimension: dim }),
                })
            }
        };
        Ok(BackendSet { generator, specialists, embedder })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
      "generator": {"id": "gfm", "stub": {"rule": "moed-majority", "table": {"img-7": "Positive"}}},
      "specialists": [
        {"id": "vit", "stub": {"table": {"img-7": {"labels": ["Positive"], "scores": [0.91]}}}},
        {"id": "cnn", "remote": {"endpoint": "http://127.0.0.1:8080/api"}}
      ],
      "embedder": {"id": "enc", "dimension": 2, "stub": {"table": {"img-7": [0.1, 0.2]}}}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = BackendConfig::from_json(EXAMPLE).unwrap();
        assert_eq!(cfg.max_concurrency, 4);
        let remote = cfg.specialists[1].remote.as_ref().unwrap();
        assert_eq!(remote.retries, 1);
        assert_eq!(remote.timeout_secs, DEFAULT_TIMEOUT_SECS);
        let set = cfg.build(None).unwrap();
        assert_eq!(set.specialist_refs().iter().map(|s| s.id()).collect::<Vec<_>>(), ["vit", "cnn"]);
        assert_eq!(set.embedder.as_ref().unwrap().dimension(), 2);
        assert_eq!(set.generator.as_ref().unwrap().generate("img-7", "").unwrap(), "Positive");
    }

    fn rejects(text: &str) {
        assert!(BackendConfig::from_json(text).is_err(), "accepted {text}");
    }

    #[test]
    fn invalid_descriptors() {
        rejects(r#"{"generator": {"id": "g"}}"#);
        rejects(r#"{"generator": {"id": "g", "stub": {}, "remote": {"endpoint": "http://x/"}}}"#);
        rejects(r#"{"generator": {"id": "g", "remote": {"endpoint": "relative/path"}}}"#);
        rejects(r#"{"generator": {"id": "g", "remote": {"endpoint": "http://x/", "timeout_secs": 0}}}"#);
        rejects(r#"{"generator": {"id": "g", "stub": {"rule": "constant"}}}"#);
        rejects(r#"{"embedder": {"id": "e", "stub": {"table": {}}}}"#);
        rejects(r#"{"embedder": {"id": "e", "dimension": 0, "stub": {"table": {}}}}"#);
        rejects(r#"{"specialists": [{"id": "a", "dimension": 3, "stub": {"table": {}}}]}"#);
        rejects(r#"{"specialists": [{"id": "a", "stub": {"table": {}}}, {"id": "a", "stub": {"table": {}}}]}"#);
        rejects(r#"{"max_concurrency": 0}"#);
        rejects(r#"{"generatr": {}}"#);
    }

    #[test]
    fn prediction_mapping() {
        let labels = LabelSet::new(["Negative", "Positive"], None).unwrap();
        let p = prediction_from_names("x", &["positive".into()], None, &labels).unwrap();
        assert_eq!(p.labels, vec![1]);
        assert!(prediction_from_names("x", &["Bogus".into()], None, &labels).unwrap_err().is_protocol());
        assert!(prediction_from_names("x", &["Positive".into()], Some(vec![0.5, 0.5]), &labels).unwrap_err().is_protocol());
        assert!(prediction_from_names("x", &["Positive".into()], Some(vec![f64::NAN]), &labels).unwrap_err().is_protocol());
    }
}
