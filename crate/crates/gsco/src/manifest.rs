//! JSONL dataset manifests.
//!
//! The first non-blank line is a header object
//! `{"name", "task", "label_set"?, "negative_label"?}`; each following line is
//! one sample `{"id", "image", "modality", "task"?, "labels"?, "question"?,
//! "answer"?, "report"?}`. Labels are display strings matched against the
//! label set after normalization. Every error carries its 1-based line number.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use gsco_core::label::LabelIndex;
use gsco_core::prompt::{render_prompt, Placeholder, PromptBindings, TemplateId};
use gsco_core::{LabelSet, Sample, TaskKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate sample id {id:?} (first seen on line {first_line})")]
    DuplicateId { id: String, first_line: usize, line: usize },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub task: TaskKind,
    pub label_set: Option<LabelSet>,
    pub samples: Vec<Sample>,
}

impl DatasetManifest {
    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    name: String,
    task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_set: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    negative_label: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    id: String,
    image: String,
    modality: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<String>,
}

fn invalid(line: usize, message: impl Into<String>) -> ManifestError {
    ManifestError::Validation { line, message: message.into() }
}

fn parse_header(line: usize, text: &str) -> Result<(String, TaskKind, Option<LabelSet>), ManifestError> {
    let h: HeaderLine =
        serde_json::from_str(text).map_err(|e| ManifestError::Parse { line, message: format!("bad header: {e}") })?;
    let label_set = match (h.task.is_classification(), h.label_set) {
        (true, Some(labels)) => Some(
            LabelSet::with_negative_name(labels, h.negative_label.as_deref()).map_err(|e| invalid(line, e.to_string()))?,
        ),
        (true, None) => return Err(invalid(line, format!("task {} requires a label_set", h.task))),
        (false, Some(_)) => return Err(invalid(line, format!("task {} takes no label_set", h.task))),
        (false, None) => None,
    };
    Ok((h.name, h.task, label_set))
}

fn convert_sample(line: usize, s: SampleLine, task: TaskKind, labels: Option<&LabelSet>) -> Result<Sample, ManifestError> {
    if s.id.is_empty() {
        return Err(invalid(line, "empty sample id"));
    }
    if let Some(t) = s.task {
        if t != task {
            return Err(invalid(line, format!("sample task {t} differs from manifest task {task}")));
        }
    }
    let mut sample = Sample {
        id: s.id,
        image_ref: s.image,
        modality: s.modality,
        task,
        truth_labels: None,
        question: None,
        reference_text: None,
    };
    match task {
        TaskKind::ClsBinary | TaskKind::ClsMulticlass | TaskKind::ClsMultilabel => {
            let set = labels.expect("classification header carries a label set");
            let names = s.labels.ok_or_else(|| invalid(line, "classification sample lacks \"labels\""))?;
            let mut truth: Vec<LabelIndex> = Vec::with_capacity(names.len());
            for name in &names {
                let idx = set.find(name).ok_or_else(|| invalid(line, format!("label {name:?} is not in the label set")))?;
                if truth.contains(&idx) {
                    return Err(invalid(line, format!("label {name:?} listed twice")));
                }
                truth.push(idx);
            }
            if task.is_single_label() && truth.len() != 1 {
                return Err(invalid(line, format!("{task} sample needs exactly one label, found {}", truth.len())));
            }
            truth.sort_unstable();
            sample.truth_labels = Some(truth);
        }
        TaskKind::VqaClosed | TaskKind::VqaOpen => {
            sample.question = Some(s.question.ok_or_else(|| invalid(line, "VQA sample lacks \"question\""))?);
            sample.reference_text = Some(s.answer.ok_or_else(|| invalid(line, "VQA sample lacks \"answer\""))?);
        }
        TaskKind::Mrg => {
            sample.reference_text = Some(s.report.ok_or_else(|| invalid(line, "report sample lacks \"report\""))?);
        }
    }
    Ok(sample)
}

pub fn parse_manifest(reader: impl BufRead) -> Result<DatasetManifest, ManifestError> {
    let mut header = None;
    let mut samples = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text.map_err(|e| ManifestError::Parse { line, message: e.to_string() })?;
        if text.trim().is_empty() {
            continue;
        }
        let Some((_, task, labels)) = &header else {
            header = Some(parse_header(line, &text)?);
            continue;
        };
        let raw: SampleLine =
            serde_json::from_str(&text).map_err(|e| ManifestError::Parse { line, message: e.to_string() })?;
        if let Some(&first_line) = seen.get(&raw.id) {
            return Err(ManifestError::DuplicateId { id: raw.id, first_line, line });
        }
        seen.insert(raw.id.clone(), line);
        samples.push(convert_sample(line, raw, *task, labels.as_ref())?);
    }
    let (name, task, label_set) = header.ok_or(ManifestError::Parse { line: 1, message: "missing header line".into() })?;
    Ok(DatasetManifest { name, task, label_set, samples })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
    parse_manifest(BufReader::new(file))
}

pub fn write_manifest(manifest: &DatasetManifest, mut out: impl Write) -> io::Result<()> {
    let header = HeaderLine {
        name: manifest.name.clone(),
        task: manifest.task,
        label_set: manifest.label_set.as_ref().map(|s| s.labels().to_vec()),
        negative_label: manifest
            .label_set
            .as_ref()
            .and_then(|s| s.negative_label().and_then(|i| s.display(i)).map(String::from)),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for s in &manifest.samples {
        let labels = manifest.label_set.as_ref().zip(s.truth_labels.as_ref()).map(|(set, truth)| {
            truth.iter().filter_map(|&i| set.display(i)).map(String::from).collect()
        });
        let (answer, report) = match s.task {
            TaskKind::Mrg => (None, s.reference_text.clone()),
            _ => (s.reference_text.clone(), None),
        };
        let line = SampleLine {
            id: s.id.clone(),
            image: s.image_ref.clone(),
            modality: s.modality.clone(),
            task: Some(s.task),
            labels,
            question: s.question.clone(),
            answer,
            report,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> io::Result<()> {
    let mut buf = Vec::new();
    write_manifest(manifest, &mut buf)?;
    fs::write(path, buf)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgbPrompt {
    pub sample_id: String,
    pub image_ref: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgbWarning {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DgbBatch {
    pub prompts: Vec<DgbPrompt>,
    pub warnings: Vec<DgbWarning>,
}

#[derive(Debug, thiserror::Error)]
pub enum DgbError {
    #[error("diagnosis-guided prompts need a classification manifest, got task {0}")]
    NotClassification(TaskKind),
    #[error("sample {0:?}: {1}")]
    Prompt(String, gsco_core::prompt::PromptError),
}

/// One report-generation prompt per sample, naming its verified diagnosis.
///
/// Samples with several truth labels are skipped with a warning. A multilabel
/// sample with no labels uses the negative label when the set declares one.
pub fn build_dgb_prompts(manifest: &DatasetManifest) -> Result<DgbBatch, DgbError> {
    let Some(labels) = manifest.label_set.as_ref().filter(|_| manifest.task.is_classification()) else {
        return Err(DgbError::NotClassification(manifest.task));
    };
    let mut batch = DgbBatch::default();
    for s in &manifest.samples {
        let truth = s.truth_labels.as_deref().unwrap_or_default();
        let disease = match truth {
            [one] => labels.display(*one),
            [] => labels.negative_label().and_then(|i| labels.display(i)),
            _ => None,
        };
        let Some(disease) = disease else {
            let reason = if truth.is_empty() {
                "no truth label and no negative label declared".to_string()
            } else {
                format!("{} truth labels; the prompt names a single diagnosis", truth.len())
            };
            log::warn!("skipping {}: {reason}", s.id);
            batch.warnings.push(DgbWarning { sample_id: s.id.clone(), reason });
            continue;
        };
        let bindings = PromptBindings::new()
            .with(Placeholder::Modality, s.modality.as_str())
            .with(Placeholder::Disease, disease);
        let prompt = render_prompt(TemplateId::Dgb, &bindings).map_err(|e| DgbError::Prompt(s.id.clone(), e))?;
        batch.prompts.push(DgbPrompt { sample_id: s.id.clone(), image_ref: s.image_ref.clone(), prompt });
    }
    Ok(batch)
}
