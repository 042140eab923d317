//! Specialist aggregation: the majority-vote baseline and the text contexts
//! injected into collaboration prompts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::label::{LabelIndex, LabelSet, SpecialistPrediction};
use crate::vector::RetrievedCase;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VoteError {
    #[error("no predictions to vote over")]
    Empty,
    #[error("prediction from {specialist:?} has {count} labels, majority voting needs exactly one")]
    NotSingleLabel { specialist: String, count: usize },
    #[error("prediction from {specialist:?} names label index {label} outside the label set")]
    OutOfSet { specialist: String, label: LabelIndex },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub winning_labels: Vec<LabelIndex>,
    /// Votes per label, indexed like the label set.
    pub tally: Vec<usize>,
    pub tied: bool,
}

fn tally(predictions: &[SpecialistPrediction], labels: &LabelSet) -> Result<Vec<usize>, VoteError> {
    let mut counts = vec![0usize; labels.len()];
    for p in predictions {
        for &l in &p.labels {
            let slot = counts
                .get_mut(l)
                .ok_or_else(|| VoteError::OutOfSet { specialist: p.specialist_id.clone(), label: l })?;
            *slot += 1;
        }
    }
    Ok(counts)
}

/// Plurality vote for single-label tasks. A tie among the top counts goes to
/// the tied label that comes first in the label set, with `tied` raised.
pub fn majority_vote(predictions: &[SpecialistPrediction], labels: &LabelSet) -> Result<VoteOutcome, VoteError> {
    if predictions.is_empty() {
        return Err(VoteError::Empty);
    }
    if let Some(p) = predictions.iter().find(|p| p.labels.len() != 1) {
        return Err(VoteError::NotSingleLabel { specialist: p.specialist_id.clone(), count: p.labels.len() });
    }
    let tally = tally(predictions, labels)?;
    let top = tally.iter().copied().max().unwrap_or(0);
    let mut leaders = tally.iter().enumerate().filter(|(_, &c)| c == top).map(|(i, _)| i);
    let winner = leaders.next().expect("non-empty tally has a maximum");
    let tied = leaders.next().is_some();
    Ok(VoteOutcome { winning_labels: vec![winner], tally, tied })
}

/// Per-label strict majority for multilabel tasks: a label wins when more than
/// half of the specialists name it. An empty result falls back to the label
/// set's negative label when one is declared. `tied` is raised when some label
/// received exactly half of the votes.
pub fn multilabel_vote(predictions: &[SpecialistPrediction], labels: &LabelSet) -> Result<VoteOutcome, VoteError> {
    if predictions.is_empty() {
        return Err(VoteError::Empty);
    }
    let n = predictions.len();
    let tally = tally(predictions, labels)?;
    let mut winning_labels: Vec<LabelIndex> =
        tally.iter().enumerate().filter(|(_, &c)| 2 * c > n).map(|(i, _)| i).collect();
    let tied = tally.iter().any(|&c| c > 0 && 2 * c == n);
    if winning_labels.is_empty() {
        winning_labels.extend(labels.negative_label());
    }
    Ok(VoteOutcome { winning_labels, tally, tied })
}

fn join_labels(out: &mut String, names: impl IntoIterator<Item = impl AsRef<str>>) {
    let start = out.len();
    for name in names {
        if out.len() > start {
            out.push('+');
        }
        out.push_str(name.as_ref());
    }
    if out.len() == start {
        out.push_str("none");
    }
}

/// Specialist answers in registration order: labels within one prediction are
/// joined by "+", predictions by ", ". An empty prediction reads "none".
pub fn format_moed_context(predictions: &[SpecialistPrediction], labels: &LabelSet) -> String {
    let mut out = String::new();
    for (i, p) in predictions.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        join_labels(&mut out, p.labels.iter().filter_map(|&l| labels.display(l)));
    }
    out
}

/// Retrieved-case context. Cases carrying label metadata are rendered like
/// [`format_moed_context`], most similar first; otherwise the top case's text
/// is used verbatim. No cases reads "none".
pub fn format_rad_context(cases: &[RetrievedCase]) -> String {
    let Some(top) = cases.first() else {
        return String::from("none");
    };
    if top.meta_labels.is_none() {
        return top.meta_text.clone().unwrap_or_else(|| String::from("none"));
    }
    let mut out = String::new();
    for (i, c) in cases.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        join_labels(&mut out, c.meta_labels.iter().flatten());
    }
    out
}
