//! Semi-supervised semantic parser training by logical offline cycle
//! consistency: sampled parses of unlabeled text are weighted by a frozen
//! text generator's reconstruction score plus a count-based prior over
//! logical-form parts, then used as weighted supervision.

pub mod annotation_store;
pub mod data;
pub mod logic_prior;
pub mod logical_forms;
pub mod metrics;
pub mod models;
pub mod reward;
pub mod run_config;
pub mod toy_domain;
pub mod training;
