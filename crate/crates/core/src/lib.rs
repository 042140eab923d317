//! Core machinery for generalist-specialist collaborative inference.
//!
//! The crate is `no_std` (it needs `alloc`) so it can be embedded anywhere a
//! scoring or retrieval kernel is useful. Everything that touches files,
//! sockets or threads lives in the `gsco` companion crate.
//!
//! Modules:
//!
//! - [`label`]: label sets, samples, predictions and label normalization
//! - [`vector`]: exact top-k cosine retrieval over an immutable index
//! - [`vote`]: majority voting and context formatting for specialist outputs
//! - [`prompt`]: the prompt templates and flat placeholder rendering
//! - [`parse`]: mapping free-form generator text back onto a label set
//! - [`backend`]: the capability traits (generate / predict / embed)
//! - [`pipeline`]: end-to-end collaborative inference over those traits
//! - [`metrics`]: classification, VQA and NLG scores plus bootstrap CIs

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backend;
pub mod label;
pub mod metrics;
pub mod parse;
pub mod pipeline;
pub mod prompt;
pub mod vector;
pub mod vote;

pub use label::{normalize_label, Diagnosis, LabelSet, LabelSetError, Sample, SpecialistPrediction, TaskKind};
pub use vector::{cosine_similarity, EmbeddingVector, Index, IndexEntry, IndexError, RetrievalConfig, RetrievedCase};
