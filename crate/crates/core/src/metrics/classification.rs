use alloc::vec;
use alloc::vec::Vec;

use super::{ratio, MetricError};
use crate::label::LabelIndex;

/// Fraction of positions where prediction equals truth.
pub fn accuracy<T: PartialEq>(truth: &[T], pred: &[T]) -> Result<f64, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::Shape { truth: truth.len(), pred: pred.len() });
    }
    if truth.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(ratio(hits, truth.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// One-vs-rest confusion counts for every class of a label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
    pub samples: usize,
}

impl ConfusionCounts {
    /// Counts from per-sample label subsets. Works for single-label tasks too,
    /// where each subset has one element (or none, for an unparseable answer).
    pub fn from_sets(truth: &[Vec<LabelIndex>], pred: &[Vec<LabelIndex>], n_classes: usize) -> Result<Self, MetricError> {
        if truth.len() != pred.len() {
            return Err(MetricError::Shape { truth: truth.len(), pred: pred.len() });
        }
        let mut classes = vec![ClassCounts::default(); n_classes];
        for (t, p) in truth.iter().zip(pred) {
            if let Some(&bad) = t.iter().chain(p).find(|&&l| l >= n_classes) {
                return Err(MetricError::OutOfSet(bad));
            }
            for (c, counts) in classes.iter_mut().enumerate() {
                match (t.contains(&c), p.contains(&c)) {
                    (true, true) => counts.tp += 1,
                    (false, true) => counts.fp += 1,
                    (true, false) => counts.fn_ += 1,
                    (false, false) => counts.tn += 1,
                }
            }
        }
        Ok(ConfusionCounts { classes, samples: truth.len() })
    }

    pub fn pooled(&self) -> ClassCounts {
        self.classes.iter().fold(ClassCounts::default(), |acc, c| ClassCounts {
            tp: acc.tp + c.tp,
            fp: acc.fp + c.fp,
            fn_: acc.fn_ + c.fn_,
            tn: acc.tn + c.tn,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<ClassCounts> for Prf {
    /// F1 is computed as 2TP / (2TP + FP + FN), which equals 2PR / (P + R)
    /// and is exact when pooled counts make precision equal recall.
    fn from(c: ClassCounts) -> Prf {
        Prf {
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        }
    }
}

pub fn per_class_prf(counts: &ConfusionCounts, class: LabelIndex) -> Result<Prf, MetricError> {
    counts.classes.get(class).copied().map(Prf::from).ok_or(MetricError::OutOfSet(class))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum F1Mode {
    /// Unweighted mean of per-class F1 over every class in the label set.
    Macro,
    /// F1 of counts pooled over all classes.
    Micro,
}

pub fn aggregate_f1(
    truth: &[Vec<LabelIndex>],
    pred: &[Vec<LabelIndex>],
    n_classes: usize,
    mode: F1Mode,
) -> Result<f64, MetricError> {
    if n_classes == 0 {
        return Err(MetricError::EmptyInput);
    }
    let counts = ConfusionCounts::from_sets(truth, pred, n_classes)?;
    Ok(match mode {
        F1Mode::Macro => counts.classes.iter().map(|&c| Prf::from(c).f1).sum::<f64>() / n_classes as f64,
        F1Mode::Micro => Prf::from(counts.pooled()).f1,
    })
}
