//! Fairness-aware ensemble pipelines: composition, evaluation and guidance.

pub mod cli;
pub mod composition;
pub mod dataset;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod learners;
pub mod metrics;
pub mod mitigation;
pub mod optim;
pub mod seed;

pub use error::{Error, Result};
