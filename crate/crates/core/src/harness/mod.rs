//! Experiment orchestration: configuration, run manifests, the recursive
//! training loop and report generation.

pub mod config;
pub mod engine;
pub mod filter;
pub mod manifest;
pub mod remote_eval;
pub mod report;
pub mod run;

pub use config::*;
pub use engine::*;
pub use filter::*;
pub use manifest::*;
pub use remote_eval::*;
pub use report::*;
pub use run::*;
