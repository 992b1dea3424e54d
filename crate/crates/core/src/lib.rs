//! Trait-analysis toolkit: vote aggregation over per-model Big Five scores,
//! a five-method independence-test battery with a consensus matrix, a
//! synthetic multi-modality structural causal model, and a causal
//! representation learner evaluated against its ground truth.

pub mod aggregation;
pub mod cli;
pub mod crl;
pub mod error;
pub mod independence;
pub mod llm_eval;
pub mod report;
pub mod synth;
mod rng;
pub mod tabular;

pub use error::{Error, Result};
