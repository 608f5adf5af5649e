//! Parser and generator models behind one sequence-to-sequence contract,
//! with a small reference encoder-decoder that trains on a CPU.

mod handle;
pub mod network;
mod optim;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logical_forms::{FormKind, LogicalForm};

pub use handle::{ModelConfig, ModelHandle, DEFAULT_MAX_LEN};
pub use optim::{Optimizer, OptimizerKind};
pub use vocab::{Vocabulary, EOS, EOS_TOKEN, UNK, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model is frozen and rejects updates")]
    FrozenModel,
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
    #[error("update has {got} entries, model has {expected} parameters")]
    ParameterCount { expected: usize, got: usize },
    #[error("non-finite weight {0} in update batch")]
    NonFiniteWeight(f64),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Parser,
    Generator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Parser => "parser",
            Role::Generator => "generator",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parser" => Ok(Role::Parser),
            "generator" => Ok(Role::Generator),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ModelError::InvalidSampling(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::InvalidSampling(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// One decoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub tokens: Vec<String>,
    /// log-probability of `tokens` (plus the end marker unless truncated)
    /// under the model at temperature 1.
    pub logq: f64,
    /// Generation hit the length cap without emitting the end marker.
    pub truncated: bool,
}

impl SampleResult {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// The decoded logical form, or `None` when the sample is malformed
    /// (truncated or unparseable).
    pub fn form(&self, kind: FormKind) -> Option<LogicalForm> {
        if self.truncated {
            return None;
        }
        kind.parse(&self.text()).ok()
    }
}

/// A (condition, target) pair with its update weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example<'a> {
    pub condition: &'a str,
    pub target: &'a str,
    pub weight: f64,
}

impl<'a> Example<'a> {
    pub fn new(condition: &'a str, target: &'a str, weight: f64) -> Self {
        Self {
            condition,
            target,
            weight,
        }
    }
}

/// The interface the training loop needs from a parser or generator.
///
/// `logprob`, `sample` and `greedy` are read-only; updates take `&mut self`.
pub trait Seq2Seq: Clone + Send + Sync {
    fn role(&self) -> Role;
    fn is_frozen(&self) -> bool;
    fn num_parameters(&self) -> usize;

    /// Artifact version tag: the iteration that produced these parameters.
    fn version(&self) -> u32;
    fn set_version(&mut self, version: u32);

    /// log p(target | condition), including the end marker.
    fn logprob(&self, condition: &str, target: &str) -> f64;

    fn sample(
        &self,
        condition: &str,
        n: usize,
        params: &SamplingParams,
        seed: u64,
    ) -> Result<Vec<SampleResult>, ModelError>;

    fn greedy(&self, condition: &str) -> SampleResult;

    /// Adds `w · ∇ log p(target | condition)` into `grad`, with `w` chosen by
    /// `weight` from the current log-probability, and returns that
    /// log-probability.
    fn accumulate_gradient(
        &self,
        condition: &str,
        target: &str,
        weight: &mut dyn FnMut(f64) -> f64,
        grad: &mut [f64],
    ) -> f64;

    /// parameters += delta
    fn apply_delta(&mut self, delta: &[f64]) -> Result<(), ModelError>;

    /// Value copy that rejects updates.
    fn clone_frozen(&self) -> Self;

    /// Unfrozen copy of the same parameters serving `role`, at version 0.
    fn with_role(&self, role: Role) -> Self;

    fn save(&self, path: &std::path::Path) -> Result<(), ModelError>;
    fn load(path: &std::path::Path) -> Result<Self, ModelError>;

    /// Hex digest of the parameter vector.
    fn fingerprint(&self) -> String;

    /// Σ weight · ∇ log p over the batch.
    fn gradient(&self, batch: &[Example]) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_parameters()];
        for ex in batch {
            let w = ex.weight;
            self.accumulate_gradient(ex.condition, ex.target, &mut |_| w, &mut grad);
        }
        grad
    }

    /// One plain gradient-ascent step:
    /// parameters += lr / |batch| · Σ weight · ∇ log p.
    fn weighted_update(&mut self, batch: &[Example], lr: f64) -> Result<(), ModelError> {
        if self.is_frozen() {
            return Err(ModelError::FrozenModel);
        }
        if let Some(ex) = batch.iter().find(|ex| !ex.weight.is_finite()) {
            return Err(ModelError::NonFiniteWeight(ex.weight));
        }
        if batch.is_empty() {
            return Ok(());
        }
        let scale = lr / batch.len() as f64;
        let delta: Vec<f64> = self.gradient(batch).iter().map(|g| g * scale).collect();
        self.apply_delta(&delta)
    }
}
