//! Turning run records into metric tables with bootstrap confidence intervals.
//!
//! The metric family follows the task: accuracy for binary classification,
//! macro- and micro-F1 for multiclass and multilabel, token scores for VQA,
//! and BLEU-1 / ROUGE-1 / ROUGE-L / METEOR for report generation. Bootstrap
//! replicates run in parallel but each draws from its own seeded stream, so
//! the output only depends on the records, the manifest and the seed.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use gsco_core::label::LabelIndex;
use gsco_core::metrics::{self, bootstrap_replicate, interval_from_replicates, F1Mode, Interval, MetricError};
use gsco_core::pipeline::Mode;
use gsco_core::TaskKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::DatasetManifest;
use crate::records::RunRecord;

pub const DEFAULT_REPLICATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub seed: u64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub mode: Mode,
    pub n: usize,
    pub metrics: BTreeMap<String, Interval>,
    pub seed: u64,
    #[serde(rename = "B")]
    pub replicates: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write report to {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Runs the percentile bootstrap with replicates spread over the rayon pool.
pub fn parallel_bootstrap<R, F>(items: &[R], statistic: F, cfg: MetricConfig) -> Result<Interval, MetricError>
where
    R: Sync,
    F: Fn(&[&R]) -> f64 + Sync,
{
    if items.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if cfg.replicates == 0 {
        return Err(MetricError::ZeroReplicates);
    }
    let all: Vec<&R> = items.iter().collect();
    let point = statistic(&all);
    let values = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|b| bootstrap_replicate(items, &statistic, cfg.seed, b))
        .collect();
    Ok(interval_from_replicates(point, values))
}

fn mean_of<R>(f: impl Fn(&R) -> f64) -> impl Fn(&[&R]) -> f64 {
    move |xs: &[&R]| xs.iter().map(|x| f(x)).sum::<f64>() / xs.len() as f64
}

struct ClsItem {
    truth: Vec<LabelIndex>,
    pred: Vec<LabelIndex>,
}

struct TextItem {
    pred: String,
    reference: String,
}

type Paired<'a> = Vec<(&'a RunRecord, &'a gsco_core::Sample)>;

fn validate_records<'a>(records: &'a [RunRecord], manifest: &'a DatasetManifest) -> Result<(Mode, Paired<'a>), ReportError> {
    let first = records.first().ok_or(ReportError::EmptyInput)?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        if r.mode != first.mode {
            return Err(ReportError::Validation(format!("records mix modes {} and {}", first.mode, r.mode)));
        }
        let sample = manifest
            .sample(&r.sample_id)
            .ok_or_else(|| ReportError::Validation(format!("record for unknown sample {:?}", r.sample_id)))?;
        if !seen.insert(r.sample_id.as_str()) {
            return Err(ReportError::Validation(format!("more than one record for sample {:?}", r.sample_id)));
        }
        pairs.push((r, sample));
    }
    Ok((first.mode, pairs))
}

pub fn compute_report(records: &[RunRecord], manifest: &DatasetManifest, cfg: MetricConfig) -> Result<EvalReport, ReportError> {
    let (mode, pairs) = validate_records(records, manifest)?;
    let mut out = BTreeMap::new();
    let task = manifest.task;

    if task.is_classification() {
        let n_classes = manifest.label_set.as_ref().map_or(0, |s| s.len());
        let items = pairs
            .iter()
            .map(|(r, s)| {
                let pred = r.diagnosis.predicted_labels().ok_or_else(|| {
                    ReportError::Validation(format!("sample {:?}: expected predicted labels, found generated text", r.sample_id))
                })?;
                let mut pred = pred.to_vec();
                pred.sort_unstable();
                Ok(ClsItem { truth: s.truth_labels.clone().unwrap_or_default(), pred })
            })
            .collect::<Result<Vec<_>, ReportError>>()?;
        if task == TaskKind::ClsBinary {
            let acc = |xs: &[&ClsItem]| {
                let t: Vec<_> = xs.iter().map(|x| &x.truth).collect();
                let p: Vec<_> = xs.iter().map(|x| &x.pred).collect();
                metrics::accuracy(&t, &p).unwrap_or(0.0)
            };
            out.insert("accuracy".into(), parallel_bootstrap(&items, acc, cfg)?);
        } else {
            for (name, mode) in [("macro_f1", F1Mode::Macro), ("micro_f1", F1Mode::Micro)] {
                let f1 = |xs: &[&ClsItem]| {
                    let t: Vec<_> = xs.iter().map(|x| x.truth.clone()).collect();
                    let p: Vec<_> = xs.iter().map(|x| x.pred.clone()).collect();
                    metrics::aggregate_f1(&t, &p, n_classes, mode).unwrap_or(0.0)
                };
                out.insert(name.into(), parallel_bootstrap(&items, f1, cfg)?);
            }
        }
    } else {
        let items = pairs
            .iter()
            .map(|(r, s)| {
                let pred = r.diagnosis.generated_text().ok_or_else(|| {
                    ReportError::Validation(format!("sample {:?}: expected generated text, found labels", r.sample_id))
                })?;
                Ok(TextItem { pred: pred.to_string(), reference: s.reference_text.clone().unwrap_or_default() })
            })
            .collect::<Result<Vec<_>, ReportError>>()?;
        if task.is_vqa() {
            let closed = task == TaskKind::VqaClosed;
            let scores: Vec<_> = items.iter().map(|i| metrics::score_vqa_item(&i.pred, &i.reference, closed)).collect();
            out.insert("vqa_accuracy".into(), parallel_bootstrap(&scores, mean_of(|s: &metrics::VqaScore| f64::from(u8::from(s.correct(closed)))), cfg)?);
            out.insert("token_precision".into(), parallel_bootstrap(&scores, mean_of(|s: &metrics::VqaScore| s.precision), cfg)?);
            out.insert("token_recall".into(), parallel_bootstrap(&scores, mean_of(|s: &metrics::VqaScore| s.recall), cfg)?);
            out.insert("token_f1".into(), parallel_bootstrap(&scores, mean_of(|s: &metrics::VqaScore| s.f1), cfg)?);
        } else {
            let per_item: Vec<[f64; 3]> = items
                .iter()
                .map(|i| {
                    [
                        metrics::bleu1(&i.pred, &i.reference).0,
                        metrics::rouge1(&i.pred, &i.reference),
                        metrics::rouge_l(&i.pred, &i.reference).0,
                    ]
                })
                .collect();
            for (k, name) in ["bleu1", "rouge1", "rouge_l"].into_iter().enumerate() {
                out.insert(name.into(), parallel_bootstrap(&per_item, mean_of(move |v: &[f64; 3]| v[k]), cfg)?);
            }
            // METEOR is a corpus statistic, recomputed on each resample
            let meteor = |xs: &[&TextItem]| {
                let hyps: Vec<&str> = xs.iter().map(|x| x.pred.as_str()).collect();
                let golds: Vec<&str> = xs.iter().map(|x| x.reference.as_str()).collect();
                metrics::meteor_lite(&hyps, &golds).unwrap_or(0.0)
            };
            out.insert("meteor".into(), parallel_bootstrap(&items, meteor, cfg)?);
        }
    }

    Ok(EvalReport {
        dataset: manifest.name.clone(),
        mode,
        n: pairs.len(),
        metrics: out,
        seed: cfg.seed,
        replicates: cfg.replicates,
    })
}

pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn cell(i: &Interval) -> String {
    format!("{:.4} ({:.4}, {:.4})", i.point, i.ci_low, i.ci_high)
}

/// Plain-text table with one "estimate (ci_low, ci_high)" cell per metric.
pub fn report_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dataset: {}  mode: {}  n: {}  bootstrap: B={} seed={}", report.dataset, report.mode, report.n, report.replicates, report.seed);
    let width = report.metrics.keys().map(String::len).max().unwrap_or(6).max(6);
    let _ = writeln!(s, "{:<width$}  estimate (95% CI)", "metric");
    for (name, i) in &report.metrics {
        let _ = writeln!(s, "{name:<width$}  {}", cell(i));
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io { path: path.display().to_string(), source })
}

/// Computes the report and writes `report.json` and `report.txt` into `dir`.
pub fn write_report(
    records: &[RunRecord],
    manifest: &DatasetManifest,
    cfg: MetricConfig,
    dir: impl AsRef<Path>,
) -> Result<EvalReport, ReportError> {
    let report = compute_report(records, manifest, cfg)?;
    let dir = dir.as_ref();
    write_file(&dir.join("report.json"), &report_json(&report))?;
    write_file(&dir.join("report.txt"), &report_text(&report))?;
    Ok(report)
}

/// Side-by-side table of several reports: one row per metric, one column per
/// report labelled `dataset/mode`.
pub fn comparison_text(reports: &[EvalReport]) -> String {
    let names: Vec<&String> = {
        let mut v: Vec<&String> = reports.iter().flat_map(|r| r.metrics.keys()).collect();
        v.sort();
        v.dedup();
        v
    };
    let headers: Vec<String> = reports.iter().map(|r| format!("{}/{} (n={})", r.dataset, r.mode, r.n)).collect();
    let name_w = names.iter().map(|n| n.len()).max().unwrap_or(6).max(6);
    let col_w = headers.iter().map(String::len).max().unwrap_or(0).max(26);
    let mut s = String::new();
    let _ = write!(s, "{:<name_w$}", "metric");
    for h in &headers {
        let _ = write!(s, "  {h:<col_w$}");
    }
    s.push('\n');
    for name in names {
        let _ = write!(s, "{name:<name_w$}");
        for r in reports {
            let c = r.metrics.get(name).map(cell).unwrap_or_else(|| "-".into());
            let _ = write!(s, "  {c:<col_w$}");
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
    }
    s
}
