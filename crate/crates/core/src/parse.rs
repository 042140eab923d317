//! Mapping free-form generator output back onto a label set.
//!
//! Matching is done on [`normalize_label`] forms. An exact match always wins.
//! Otherwise single-label tasks take a unique contained label, then the
//! longest contained label (earlier set index wins equal lengths), while
//! multilabel tasks take every contained label. Containment is plain
//! substring search with no word-boundary check, so "normal" matches inside
//! "abnormal".

use alloc::vec::Vec;

use crate::label::{normalize_label, LabelIndex, LabelSet, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLabels {
    pub labels: Vec<LabelIndex>,
    pub warning: bool,
}

impl ParsedLabels {
    fn from_labels(labels: Vec<LabelIndex>) -> Self {
        let warning = labels.is_empty();
        ParsedLabels { labels, warning }
    }
}

/// Non-classification tasks yield an empty set with the warning raised.
pub fn parse_prediction(text: &str, labels: &LabelSet, task: TaskKind) -> ParsedLabels {
    if !task.is_classification() {
        return ParsedLabels::from_labels(Vec::new());
    }
    let text = normalize_label(text);
    let forms = labels.normalized();

    let contained: Vec<LabelIndex> = forms
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.is_empty() && text.contains(f.as_str()))
        .map(|(i, _)| i)
        .collect();

    if let Some(i) = forms.iter().position(|f| *f == text) {
        return ParsedLabels::from_labels(alloc::vec![i]);
    }
    if task == TaskKind::ClsMultilabel {
        return ParsedLabels::from_labels(contained);
    }
    let best = match contained.as_slice() {
        [] => None,
        [only] => Some(*only),
        // max_by_key keeps the last maximum; iterate in reverse so the
        // earliest index wins among equal lengths
        many => many.iter().rev().copied().max_by_key(|&i| forms[i].chars().count()),
    };
    ParsedLabels::from_labels(best.into_iter().collect())
}
