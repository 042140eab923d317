//! In-process lookup-table backends. Responses depend only on the request,
//! so they are safe to share across worker threads without locking.

use std::collections::BTreeMap;

use gsco_core::backend::{BackendError, Embed, Generate, Predict};
use gsco_core::{EmbeddingVector, LabelSet, SpecialistPrediction};
use serde::{Deserialize, Serialize};

use super::{check_embedding, prediction_from_names};

const MOED_PREFIX: &str = "The reference answers by other models are ";
const RAD_MARKER: &str = "most similar cases are ";

/// Fallback behaviour for generator requests whose image is not in the table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerateRule {
    /// First entry of the specialist-answer line.
    FirstMoed,
    /// The entry named by more than half of the specialists; "no consensus"
    /// otherwise.
    MoedMajority,
    /// Most frequent entry of the retrieved-case line, earliest on ties.
    RadMode,
    EchoLastLine,
    /// The configured `text`, whatever the prompt.
    Constant,
}

fn context_items<'p>(prompt: &'p str, marker: &str) -> Option<Vec<&'p str>> {
    let line = prompt.lines().find_map(|l| l.find(marker).map(|at| &l[at + marker.len()..]))?;
    let body = line.strip_suffix('.').unwrap_or(line);
    Some(body.split(", ").collect())
}

fn tally<'a>(items: &[&'a str]) -> Vec<(&'a str, usize)> {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for &it in items {
        match counts.iter_mut().find(|(k, _)| *k == it) {
            Some((_, c)) => *c += 1,
            None => counts.push((it, 1)),
        }
    }
    counts
}

impl GenerateRule {
    pub fn apply(&self, prompt: &str, text: Option<&str>) -> Option<String> {
        match self {
            GenerateRule::FirstMoed => context_items(prompt, MOED_PREFIX).map(|v| v[0].to_string()),
            GenerateRule::MoedMajority => {
                let items = context_items(prompt, MOED_PREFIX)?;
                let winner = tally(&items).into_iter().find(|&(_, c)| 2 * c > items.len());
                Some(winner.map_or_else(|| "no consensus".to_string(), |(k, _)| k.to_string()))
            }
            GenerateRule::RadMode => {
                let items = context_items(prompt, RAD_MARKER)?;
                let counts = tally(&items);
                let best = counts.iter().map(|&(_, c)| c).max()?;
                counts.into_iter().find(|&(_, c)| c == best).map(|(k, _)| k.to_string())
            }
            GenerateRule::EchoLastLine => prompt.lines().last().map(str::to_string),
            GenerateRule::Constant => text.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubGenerateSpec {
    #[serde(default)]
    pub table: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<GenerateRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

pub struct StubGenerator {
    id: String,
    spec: StubGenerateSpec,
}

impl StubGenerator {
    pub fn new(id: impl Into<String>, spec: StubGenerateSpec) -> Self {
        StubGenerator { id: id.into(), spec }
    }
}

impl Generate for StubGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, image_ref: &str, prompt: &str) -> Result<String, BackendError> {
        if let Some(text) = self.spec.table.get(image_ref) {
            return Ok(text.clone());
        }
        self.spec
            .rule
            .as_ref()
            .and_then(|r| r.apply(prompt, self.spec.text.as_deref()))
            .ok_or_else(|| BackendError::MissingKey { backend: self.id.clone(), key: image_ref.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubAnswer {
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubPredictSpec {
    pub table: BTreeMap<String, StubAnswer>,
}

pub struct StubSpecialist {
    id: String,
    spec: StubPredictSpec,
}

impl StubSpecialist {
    pub fn new(id: impl Into<String>, spec: StubPredictSpec) -> Self {
        StubSpecialist { id: id.into(), spec }
    }
}

impl Predict for StubSpecialist {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, image_ref: &str, labels: &LabelSet) -> Result<SpecialistPrediction, BackendError> {
        let answer = self
            .spec
            .table
            .get(image_ref)
            .ok_or_else(|| BackendError::MissingKey { backend: self.id.clone(), key: image_ref.to_string() })?;
        prediction_from_names(&self.id, &answer.labels, answer.scores.clone(), labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubEmbedSpec {
    pub table: BTreeMap<String, Vec<f32>>,
}

pub struct StubEmbedder {
    id: String,
    dimension: usize,
    spec: StubEmbedSpec,
}

impl StubEmbedder {
    pub fn new(id: impl Into<String>, dimension: usize, spec: StubEmbedSpec) -> Self {
        StubEmbedder { id: id.into(), dimension, spec }
    }
}

impl Embed for StubEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, image_ref: &str) -> Result<EmbeddingVector, BackendError> {
        let v = self
            .spec
            .table
            .get(image_ref)
            .ok_or_else(|| BackendError::MissingKey { backend: self.id.clone(), key: image_ref.to_string() })?;
        check_embedding(&self.id, self.dimension, v.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::new(["Negative", "Positive"], Some(0)).unwrap()
    }

    fn prompt(moed: &str, rad: &str) -> String {
        format!(
            "You are a helpful medical assistant.\nThe reference diagnoses of the most similar cases are {rad}.\n{MOED_PREFIX}{moed}.\nThe possible options are: Negative, Positive."
        )
    }

    #[test]
    fn generator_table_then_rule() {
        let mut table = BTreeMap::new();
        table.insert("s1".to_string(), "Pneumonia".to_string());
        let g = StubGenerator::new("gfm", StubGenerateSpec { table: table.clone(), rule: None, text: None });
        assert_eq!(g.generate("s1", "anything").unwrap(), "Pneumonia");
        assert!(matches!(g.generate("s9", "x"), Err(BackendError::MissingKey { .. })));

        let g = StubGenerator::new("gfm", StubGenerateSpec { table, rule: Some(GenerateRule::MoedMajority), text: None });
        assert_eq!(g.generate("s1", &prompt("Negative, Positive, Positive", "none")).unwrap(), "Pneumonia");
        assert_eq!(g.generate("s2", &prompt("Negative, Positive, Positive", "none")).unwrap(), "Positive");
    }

    #[test]
    fn rules() {
        let p = prompt("Negative, Positive, Negative, Positive", "Positive, Negative, Negative, Positive, Negative");
        assert_eq!(GenerateRule::FirstMoed.apply(&p, None).unwrap(), "Negative");
        assert_eq!(GenerateRule::MoedMajority.apply(&p, None).unwrap(), "no consensus");
        assert_eq!(GenerateRule::RadMode.apply(&p, None).unwrap(), "Negative");
        assert_eq!(GenerateRule::RadMode.apply(&prompt("x", "Positive, Negative"), None).unwrap(), "Positive");
        assert_eq!(GenerateRule::EchoLastLine.apply(&p, None).unwrap(), "The possible options are: Negative, Positive.");
        assert_eq!(GenerateRule::Constant.apply(&p, Some("inconclusive")).unwrap(), "inconclusive");
        assert_eq!(GenerateRule::FirstMoed.apply("no context here", None), None);
    }

    #[test]
    fn rule_spec_json() {
        let spec: StubGenerateSpec = serde_json::from_str(r#"{"rule":"constant","text":"Normal"}"#).unwrap();
        assert_eq!(spec.rule, Some(GenerateRule::Constant));
        assert_eq!(spec.text.as_deref(), Some("Normal"));
        assert!(serde_json::from_str::<StubGenerateSpec>(r#"{"rule":"majority"}"#).is_err());
        let spec: StubGenerateSpec = serde_json::from_str(r#"{"table":{"a":"b"}}"#).unwrap();
        assert_eq!(spec.rule, None);
        let spec: StubGenerateSpec = serde_json::from_str(r#"{"rule":"moed-majority","table":{}}"#).unwrap();
        assert_eq!(spec.rule, Some(GenerateRule::MoedMajority));
    }

    #[test]
    fn specialist_lookup_and_validation() {
        let table: BTreeMap<String, StubAnswer> = serde_json::from_str(
            r#"{"s1":{"labels":["Positive"],"scores":[0.91]},"bad":{"labels":["Bogus"]},"hot":{"labels":["Positive"],"scores":[1.5]}}"#,
        )
        .unwrap();
        let s = StubSpecialist::new("spec-a", StubPredictSpec { table });
        let p = s.predict("s1", &labels()).unwrap();
        assert_eq!(p.labels, vec![1]);
        assert_eq!(p.scores, Some(vec![0.91]));
        assert_eq!(p.specialist_id, "spec-a");
        assert!(s.predict("bad", &labels()).unwrap_err().is_protocol());
        assert!(s.predict("hot", &labels()).unwrap_err().is_protocol());
        assert!(matches!(s.predict("nope", &labels()), Err(BackendError::MissingKey { .. })));
    }

    #[test]
    fn multilabel_answer() {
        let set = LabelSet::new(["Mass", "Nodule", "No finding"], Some(2)).unwrap();
        let table = BTreeMap::from([("s2".to_string(), StubAnswer { labels: vec!["Mass".into(), "Nodule".into()], scores: None })]);
        let p = StubSpecialist::new("m", StubPredictSpec { table }).predict("s2", &set).unwrap();
        assert_eq!(p.labels, vec![0, 1]);
    }

    #[test]
    fn embedder_checks() {
        let table = BTreeMap::from([
            ("s1".to_string(), vec![0.1f32, 0.2]),
            ("nan".to_string(), vec![f32::NAN, 0.2]),
            ("wide".to_string(), vec![0.1, 0.2, 0.3]),
        ]);
        let e = StubEmbedder::new("enc", 2, StubEmbedSpec { table });
        assert_eq!(e.embed("s1").unwrap().as_slice(), &[0.1, 0.2]);
        assert!(e.embed("nan").unwrap_err().is_protocol());
        assert!(e.embed("wide").unwrap_err().is_protocol());
    }
}
