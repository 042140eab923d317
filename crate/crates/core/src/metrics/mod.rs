//! Evaluation metrics: classification (accuracy, per-class and pooled F1),
//! VQA token scoring, BLEU-1 / ROUGE-1 / ROUGE-L / simplified METEOR, and
//! percentile-bootstrap confidence intervals.
//!
//! Every score lies in `[0, 1]`. Zero denominators produce 0.

mod bootstrap;
mod classification;
mod text;

pub use bootstrap::{bootstrap_ci, bootstrap_replicate, interval_from_replicates, percentile, Interval};
pub use classification::{accuracy, aggregate_f1, per_class_prf, ConfusionCounts, F1Mode, Prf};
pub use text::{
    bleu1, lcs_len, meteor_lite, rouge1, rouge_l, score_vqa_item, token_overlap_scores, tokenize, NlgBreakdown,
    VqaScore, CLOSED_RECALL_THRESHOLD, OPEN_RECALL_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {truth} truths vs {pred} predictions")]
    Shape { truth: usize, pred: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("label index {0} is outside the label set")]
    OutOfSet(usize),
    #[error("bootstrap needs at least one replicate")]
    ZeroReplicates,
}

pub(crate) fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
