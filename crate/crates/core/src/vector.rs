//! Exact cosine-similarity retrieval.
//!
//! Vectors are stored as `f32` but every dot product and norm is accumulated in
//! `f64`, summing in coordinate order. Both routes into a similarity value
//! ([`cosine_similarity`] and [`Index::query_topk`]) perform the same
//! operations in the same order, so they agree bit-for-bit.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("vector has zero norm or non-finite values")]
    DegenerateVector,
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("retrieval k must be at least 1")]
    ZeroK,
}

/// Fixed-length embedding, persisted as 32-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.0, &self.0))
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(v: Vec<f32>) -> Self {
        EmbeddingVector(v)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |acc, (&x, &y)| acc + f64::from(x) * f64::from(y))
}

fn checked_norm(v: &EmbeddingVector) -> Result<f64, IndexError> {
    if !v.is_finite() {
        return Err(IndexError::DegenerateVector);
    }
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(IndexError::DegenerateVector)
    }
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::Dimension { expected: a.dim(), actual: b.dim() });
    }
    let na = checked_norm(a)?;
    let nb = checked_norm(b)?;
    Ok(dot(a.as_slice(), b.as_slice()) / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub entry_id: String,
    pub vector: EmbeddingVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_text: Option<String>,
    pub modality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCase {
    pub entry_id: String,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_text: Option<String>,
    pub modality: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude_id: Option<String>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 5, exclude_id: None }
    }
}

impl RetrievalConfig {
    pub fn top(k: usize) -> Self {
        RetrievalConfig { k, exclude_id: None }
    }

    pub fn excluding(mut self, id: impl Into<String>) -> Self {
        self.exclude_id = Some(id.into());
        self
    }
}

/// Immutable retrieval database with per-entry norms cached at build time.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dimension: usize,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
}

impl Index {
    pub fn build(entries: Vec<IndexEntry>, dimension: usize) -> Result<Index, IndexError> {
        let mut seen = BTreeSet::new();
        let mut norms = Vec::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.entry_id.as_str()) {
                return Err(IndexError::DuplicateId(e.entry_id.clone()));
            }
            if e.vector.dim() != dimension {
                return Err(IndexError::Dimension { expected: dimension, actual: e.vector.dim() });
            }
            norms.push(checked_norm(&e.vector)?);
        }
        Ok(Index { dimension, entries, norms })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn cached_norms(&self) -> &[f64] {
        &self.norms
    }

    /// The `k` entries most similar to `query`, by descending similarity with
    /// ties broken by ascending entry id.
    pub fn query_topk(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<RetrievedCase>, IndexError> {
        if cfg.k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dimension {
            return Err(IndexError::Dimension { expected: self.dimension, actual: query.dim() });
        }
        let qn = checked_norm(query)?;
        let q = query.as_slice();

        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| cfg.exclude_id.as_deref() != Some(e.entry_id.as_str()))
            .map(|(i, e)| (dot(q, e.vector.as_slice()) / (qn * self.norms[i]), i))
            .collect();

        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then_with(|| self.entries[a.1].entry_id.cmp(&self.entries[b.1].entry_id))
        };
        let k = cfg.k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);

        Ok(scored
            .into_iter()
            .map(|(similarity, i)| {
                let e = &self.entries[i];
                RetrievedCase {
                    entry_id: e.entry_id.clone(),
                    similarity,
                    meta_labels: e.meta_labels.clone(),
                    meta_text: e.meta_text.clone(),
                    modality: e.modality.clone(),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn v(xs: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec())
    }

    fn entry(id: &str, xs: &[f32]) -> IndexEntry {
        IndexEntry { entry_id: id.into(), vector: v(xs), meta_labels: None, meta_text: None, modality: "x".into() }
    }

    fn three() -> Index {
        Index::build(vec![entry("e1", &[1.0, 0.0]), entry("e2", &[0.0, 1.0]), entry("e3", &[0.9, 0.1])], 2).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        // 32 / sqrt(14 * 77)
        let got = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((got - 0.974_631_846_197_076_2).abs() < 1e-12, "{got}");
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(IndexError::Dimension { expected: 1, actual: 2 })
        );
        assert_eq!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])), Err(IndexError::DegenerateVector));
        assert_eq!(cosine_similarity(&v(&[f32::NAN, 0.0]), &v(&[1.0, 2.0])), Err(IndexError::DegenerateVector));
    }

    #[test]
    fn build_errors() {
        assert_eq!(three().len(), 3);
        let dup = Index::build(vec![entry("a", &[1.0, 0.0]), entry("a", &[0.0, 1.0])], 2);
        assert_eq!(dup.unwrap_err(), IndexError::DuplicateId("a".into()));
        let dim = Index::build(vec![entry("a", &[1.0, 0.0, 0.0])], 2);
        assert_eq!(dim.unwrap_err(), IndexError::Dimension { expected: 2, actual: 3 });
        let zero = Index::build(vec![entry("a", &[0.0, 0.0])], 2);
        assert_eq!(zero.unwrap_err(), IndexError::DegenerateVector);
    }

    #[test]
    fn topk_examples() {
        let idx = three();
        let got = idx.query_topk(&v(&[1.0, 0.0]), &RetrievalConfig::top(2)).unwrap();
        let ids: Vec<_> = got.iter().map(|c| c.entry_id.as_str()).collect();
        assert_eq!(ids, ["e1", "e3"]);
        assert_eq!(got[0].similarity, 1.0);
        // 0.9 / sqrt(0.82), evaluated on the f32-rounded inputs
        let (a, b) = (f64::from(0.9f32), f64::from(0.1f32));
        assert_eq!(got[1].similarity, a / (a * a + b * b).sqrt());
        assert!((got[1].similarity - 0.993_883_734_673_619_4).abs() < 1e-7);

        assert_eq!(idx.query_topk(&v(&[1.0, 0.0]), &RetrievalConfig::top(10)).unwrap().len(), 3);

        let ex = idx.query_topk(&v(&[1.0, 0.0]), &RetrievalConfig::top(2).excluding("e1")).unwrap();
        let ids: Vec<_> = ex.iter().map(|c| c.entry_id.as_str()).collect();
        assert_eq!(ids, ["e3", "e2"]);
    }

    #[test]
    fn topk_errors() {
        let idx = three();
        assert_eq!(idx.query_topk(&v(&[1.0]), &RetrievalConfig::top(1)), Err(IndexError::Dimension { expected: 2, actual: 1 }));
        assert_eq!(idx.query_topk(&v(&[0.0, 0.0]), &RetrievalConfig::top(1)), Err(IndexError::DegenerateVector));
        assert_eq!(idx.query_topk(&v(&[1.0, 0.0]), &RetrievalConfig::top(0)), Err(IndexError::ZeroK));
    }

    #[test]
    fn ties_break_by_id() {
        let idx = Index::build(vec![entry("b", &[1.0, 0.0]), entry("a", &[2.0, 0.0]), entry("c", &[0.0, 1.0])], 2).unwrap();
        let got = idx.query_topk(&v(&[1.0, 0.0]), &RetrievalConfig::top(3)).unwrap();
        let ids: Vec<_> = got.iter().map(|c| c.entry_id.to_string()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn cached_norms_match_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let entries: Vec<_> = (0..1000)
            .map(|i| {
                let xs: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                IndexEntry { entry_id: alloc::format!("e{i}"), vector: EmbeddingVector::new(xs), meta_labels: None, meta_text: None, modality: "x".into() }
            })
            .collect();
        let idx = Index::build(entries, 64).unwrap();
        for (e, &n) in idx.entries().iter().zip(idx.cached_norms()) {
            let recomputed: f64 = e.vector.as_slice().iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            assert!((n - recomputed).abs() <= 1e-6 * recomputed);
        }
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-4i8..=4, dim).prop_filter("nonzero", |xs| xs.iter().any(|&x| x != 0)).prop_map(|xs| xs.into_iter().map(f32::from).collect())
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_self_one(a in vec_strategy(5), b in vec_strategy(5)) {
            let (a, b) = (EmbeddingVector::new(a), EmbeddingVector::new(b));
            prop_assert_eq!(cosine_similarity(&a, &b).unwrap(), cosine_similarity(&b, &a).unwrap());
            prop_assert!(cosine_similarity(&a, &a).unwrap() >= 1.0 - 1e-9);
            let s = cosine_similarity(&a, &b).unwrap();
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
        }

        #[test]
        fn topk_scale_invariant_and_sized(
            rows in prop::collection::vec(vec_strategy(3), 1..30),
            q in vec_strategy(3),
            k in 1usize..10,
            scale in prop::sample::select(vec![0.5f32, 2.0, 4.0, 8.0]),
            exclude in any::<bool>(),
        ) {
            let entries: Vec<_> = rows.iter().enumerate()
                .map(|(i, r)| IndexEntry { entry_id: alloc::format!("{i:03}"), vector: EmbeddingVector::new(r.clone()), meta_labels: None, meta_text: None, modality: "x".into() })
                .collect();
            let n = entries.len();
            let idx = Index::build(entries, 3).unwrap();
            let mut cfg = RetrievalConfig::top(k);
            if exclude { cfg.exclude_id = Some("000".into()); }
            let base = idx.query_topk(&EmbeddingVector::new(q.clone()), &cfg).unwrap();
            let scaled: Vec<f32> = q.iter().map(|x| x * scale).collect();
            let other = idx.query_topk(&EmbeddingVector::new(scaled), &cfg).unwrap();
            let ids = |cs: &[RetrievedCase]| cs.iter().map(|c| c.entry_id.clone()).collect::<Vec<_>>();
            prop_assert_eq!(ids(&base), ids(&other));
            prop_assert_eq!(base.len(), k.min(n - usize::from(exclude)));
            for c in &base {
                let e = idx.entries().iter().find(|e| e.entry_id == c.entry_id).unwrap();
                prop_assert_eq!(c.similarity, cosine_similarity(&EmbeddingVector::new(q.clone()), &e.vector).unwrap());
            }
        }
    }
}
