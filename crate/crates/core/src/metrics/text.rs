//! Token-level scores for VQA answers and generated reports.
//!
//! These follow the simplified textbook forms rather than the reference
//! toolkits: ROUGE-1 is recall-only, METEOR has no stemming, synonym
//! matching or fragmentation penalty.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{ratio, MetricError};

/// Closed-ended answers are correct when token recall reaches this value.
pub const CLOSED_RECALL_THRESHOLD: f64 = 0.5;
/// Open-ended answers are correct when token recall reaches this value.
pub const OPEN_RECALL_THRESHOLD: f64 = 0.75;

/// Lowercases, replaces every non-alphanumeric character with a space, and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(String::from).collect()
}

fn counts<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_ref()).or_insert(0) += 1;
    }
    m
}

/// Multiset overlap, each token counted at most as often as in the reference.
fn overlap<S: AsRef<str>, R: AsRef<str>>(pred: &[S], reference: &[R]) -> usize {
    let r = counts(reference);
    counts(pred).iter().map(|(t, &c)| c.min(r.get(t).copied().unwrap_or(0))).sum()
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// (precision, recall, f1) of the multiset overlap.
pub fn token_overlap_scores<S: AsRef<str>, R: AsRef<str>>(pred: &[S], reference: &[R]) -> (f64, f64, f64) {
    let m = overlap(pred, reference);
    let p = ratio(m, pred.len());
    let r = ratio(m, reference.len());
    (p, r, harmonic(p, r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqaScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub closed_correct: bool,
    pub open_correct: bool,
}

impl VqaScore {
    /// Correctness under the threshold matching the question type.
    pub fn correct(&self, closed: bool) -> bool {
        if closed {
            self.closed_correct
        } else {
            self.open_correct
        }
    }
}

/// Both correctness flags are always filled in; `closed` only selects which
/// one [`VqaScore::correct`] reports for callers holding the flag.
pub fn score_vqa_item(pred_text: &str, ref_text: &str, _closed: bool) -> VqaScore {
    let (precision, recall, f1) = token_overlap_scores(&tokenize(pred_text), &tokenize(ref_text));
    VqaScore {
        precision,
        recall,
        f1,
        closed_correct: recall >= CLOSED_RECALL_THRESHOLD,
        open_correct: recall >= OPEN_RECALL_THRESHOLD,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NlgBreakdown {
    /// Brevity penalty.
    pub bp: f64,
    /// Clipped unigram precision.
    pub p1: f64,
    /// Candidate length in tokens.
    pub c: usize,
    /// Reference length in tokens.
    pub r: usize,
    pub lcs_len: usize,
    pub f_lcs: f64,
}

/// BLEU with unigrams only: `BP * p1`, where `BP = exp(1 - r/c)` for a
/// candidate no longer than the reference and 1 otherwise. An empty candidate
/// or zero overlap scores 0.
pub fn bleu1(pred_text: &str, ref_text: &str) -> (f64, NlgBreakdown) {
    let pred = tokenize(pred_text);
    let reference = tokenize(ref_text);
    let (c, r) = (pred.len(), reference.len());
    let mut b = NlgBreakdown { c, r, ..NlgBreakdown::default() };
    if c == 0 {
        return (0.0, b);
    }
    b.p1 = ratio(overlap(&pred, &reference), c);
    b.bp = if c > r { 1.0 } else { libm::exp(1.0 - r as f64 / c as f64) };
    let score = if b.p1 > 0.0 { b.bp * b.p1 } else { 0.0 };
    (score, b)
}

/// Recall-oriented ROUGE-1: overlapping unigrams over reference length.
pub fn rouge1(pred_text: &str, ref_text: &str) -> f64 {
    let reference = tokenize(ref_text);
    ratio(overlap(&tokenize(pred_text), &reference), reference.len())
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L as the F-measure of LCS precision and recall.
pub fn rouge_l(pred_text: &str, ref_text: &str) -> (f64, NlgBreakdown) {
    let pred = tokenize(pred_text);
    let reference = tokenize(ref_text);
    let lcs = lcs_len(&pred, &reference);
    let f = harmonic(ratio(lcs, pred.len()), ratio(lcs, reference.len()));
    let b = NlgBreakdown { c: pred.len(), r: reference.len(), lcs_len: lcs, f_lcs: f, ..NlgBreakdown::default() };
    (f, b)
}

/// Mean over gold sentences of the best token precision any hypothesis
/// achieves against that gold sentence.
pub fn meteor_lite<G: AsRef<str>, H: AsRef<str>>(hyp_texts: &[H], gold_texts: &[G]) -> Result<f64, MetricError> {
    if gold_texts.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hyps: Vec<Vec<String>> = hyp_texts.iter().map(|h| tokenize(h.as_ref())).collect();
    let total: f64 = gold_texts
        .iter()
        .map(|g| {
            let gold = tokenize(g.as_ref());
            hyps.iter().map(|h| token_overlap_scores(h, &gold).0).fold(0.0, f64::max)
        })
        .sum();
    Ok(total / gold_texts.len() as f64)
}
