//! Shared vocabulary: task kinds, label sets, samples, predictions, diagnoses.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Index into a [`LabelSet`].
pub type LabelIndex = usize;

/// Canonical form used whenever generator text is matched against labels.
///
/// NFC, lowercase, outer whitespace trimmed, inner whitespace runs collapsed to
/// one space, and terminal periods removed. The function is idempotent.
pub fn normalize_label(text: &str) -> String {
    let lowered: String = text.to_lowercase().nfc().collect();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    let keep = out
        .trim_end_matches(|c: char| c == '.' || c.is_whitespace())
        .len();
    out.truncate(keep);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "cls-binary")]
    ClsBinary,
    #[serde(rename = "cls-multiclass")]
    ClsMulticlass,
    #[serde(rename = "cls-multilabel")]
    ClsMultilabel,
    #[serde(rename = "vqa-closed")]
    VqaClosed,
    #[serde(rename = "vqa-open")]
    VqaOpen,
    #[serde(rename = "mrg")]
    Mrg,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::ClsBinary,
        TaskKind::ClsMulticlass,
        TaskKind::ClsMultilabel,
        TaskKind::VqaClosed,
        TaskKind::VqaOpen,
        TaskKind::Mrg,
    ];

    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::ClsBinary | TaskKind::ClsMulticlass | TaskKind::ClsMultilabel)
    }

    /// Binary and multiclass tasks carry exactly one truth label per sample.
    pub fn is_single_label(self) -> bool {
        matches!(self, TaskKind::ClsBinary | TaskKind::ClsMulticlass)
    }

    pub fn is_vqa(self) -> bool {
        matches!(self, TaskKind::VqaClosed | TaskKind::VqaOpen)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ClsBinary => "cls-binary",
            TaskKind::ClsMulticlass => "cls-multiclass",
            TaskKind::ClsMultilabel => "cls-multilabel",
            TaskKind::VqaClosed => "vqa-closed",
            TaskKind::VqaOpen => "vqa-open",
            TaskKind::Mrg => "mrg",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelSetError {
    #[error("label set is empty")]
    Empty,
    #[error("labels {first:?} and {second:?} normalize to the same form {normalized:?}")]
    DuplicateLabel { first: String, second: String, normalized: String },
    #[error("negative label index {0} is out of range")]
    NegativeOutOfRange(usize),
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
}

/// Ordered label vocabulary of a classification task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    normalized: Vec<String>,
    negative: Option<LabelIndex>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I, negative: Option<LabelIndex>) -> Result<Self, LabelSetError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(LabelSetError::Empty);
        }
        let normalized: Vec<String> = labels.iter().map(|l| normalize_label(l)).collect();
        for (i, a) in normalized.iter().enumerate() {
            if let Some(j) = normalized[..i].iter().position(|b| b == a) {
                return Err(LabelSetError::DuplicateLabel {
                    first: labels[j].clone(),
                    second: labels[i].clone(),
                    normalized: a.clone(),
                });
            }
        }
        if let Some(n) = negative {
            if n >= labels.len() {
                return Err(LabelSetError::NegativeOutOfRange(n));
            }
        }
        Ok(LabelSet { labels, normalized, negative })
    }

    /// Builds a set whose negative label is given by display name.
    pub fn with_negative_name<I, S>(labels: I, negative: Option<&str>) -> Result<Self, LabelSetError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set = LabelSet::new(labels, None)?;
        match negative {
            None => Ok(set),
            Some(name) => {
                let idx = set.find(name).ok_or_else(|| LabelSetError::UnknownLabel(name.into()))?;
                Ok(LabelSet { negative: Some(idx), ..set })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn normalized(&self) -> &[String] {
        &self.normalized
    }

    pub fn display(&self, idx: LabelIndex) -> Option<&str> {
        self.labels.get(idx).map(String::as_str)
    }

    pub fn negative_label(&self) -> Option<LabelIndex> {
        self.negative
    }

    /// Looks a label up by its normalized form.
    pub fn find(&self, text: &str) -> Option<LabelIndex> {
        let needle = normalize_label(text);
        self.normalized.iter().position(|n| *n == needle)
    }

    pub fn contains_index(&self, idx: LabelIndex) -> bool {
        idx < self.labels.len()
    }

    /// Display labels joined by ", ", as they appear in prompts.
    pub fn joined(&self) -> String {
        self.labels.join(", ")
    }
}

/// One evaluation item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image_ref: String,
    pub modality: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_labels: Option<Vec<LabelIndex>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistPrediction {
    pub specialist_id: String,
    pub labels: Vec<LabelIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictionError {
    #[error("label index {0} is outside the label set")]
    OutOfSet(LabelIndex),
    #[error("expected exactly one label for a single-label task, got {0}")]
    NotSingleLabel(usize),
    #[error("{scores} scores for {labels} labels")]
    ScoreMismatch { labels: usize, scores: usize },
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("label index {0} appears more than once")]
    Repeated(LabelIndex),
}

impl SpecialistPrediction {
    pub fn validate(&self, labels: &LabelSet, task: TaskKind) -> Result<(), PredictionError> {
        for (i, &l) in self.labels.iter().enumerate() {
            if !labels.contains_index(l) {
                return Err(PredictionError::OutOfSet(l));
            }
            if self.labels[..i].contains(&l) {
                return Err(PredictionError::Repeated(l));
            }
        }
        if task.is_single_label() && self.labels.len() != 1 {
            return Err(PredictionError::NotSingleLabel(self.labels.len()));
        }
        if let Some(scores) = &self.scores {
            if scores.len() != self.labels.len() {
                return Err(PredictionError::ScoreMismatch { labels: self.labels.len(), scores: scores.len() });
            }
            if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(PredictionError::ScoreOutOfRange(bad));
            }
        }
        Ok(())
    }
}

/// What the pipeline concluded for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Labels(Vec<LabelIndex>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub sample_id: String,
    pub outcome: Outcome,
    /// Full generator output, kept even when parsing succeeded.
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_moed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_rad: Option<String>,
    #[serde(default)]
    pub parse_warning: bool,
}

impl Diagnosis {
    pub fn predicted_labels(&self) -> Option<&[LabelIndex]> {
        match &self.outcome {
            Outcome::Labels(l) => Some(l),
            Outcome::Text(_) => None,
        }
    }

    pub fn generated_text(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Text(t) => Some(t),
            Outcome::Labels(_) => None,
        }
    }
}
