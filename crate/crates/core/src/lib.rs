//! Recursive synthetic-training laboratory.
//!
//! Runs the train → generate → evaluate loop over pluggable generative models,
//! measures distributional and task-level degradation, labels collapse
//! stages, and builds domain-filtered training corpora.

pub mod analysis;
pub mod corpus;
pub mod domainfilter;
pub mod error;
pub mod harness;
pub mod http;
pub mod metrics;
pub mod models;
pub mod prompts;
pub mod rng;
pub mod toyworld;

pub use error::{Error, Result};
