use serde::{Deserialize, Serialize};

use crate::logical_forms::FormKind;
use crate::models::{OptimizerKind, SamplingParams};
use crate::reward::{RewardConfig, RewardMode, DEFAULT_EPSILON, DEFAULT_RATIO_CEILING, DEFAULT_SIGMA_FLOOR};

use super::TrainingError;

/// Training method: the full algorithm under some reward mode, or one of
/// the baselines it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Locco(RewardMode),
    /// Self-learning on the greedy parse of each input.
    GreedySl,
    /// Self-learning on N unweighted samples per input.
    SamplingSl,
    /// Supervised warm-up only.
    GoldOnly,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Locco(RewardMode::Full),
        Method::Locco(RewardMode::CcOnly),
        Method::Locco(RewardMode::PriorOnly),
        Method::GreedySl,
        Method::SamplingSl,
        Method::GoldOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Locco(m) => m.as_str(),
            Method::GreedySl => "greedy_sl",
            Method::SamplingSl => "sampling_sl",
            Method::GoldOnly => "gold_only",
        }
    }

    pub fn reward_mode(self) -> RewardMode {
        match self {
            Method::Locco(m) => m,
            _ => RewardMode::Unit,
        }
    }

    pub fn is_semi_supervised(self) -> bool {
        self != Method::GoldOnly
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy_sl" => Ok(Method::GreedySl),
            "sampling_sl" => Ok(Method::SamplingSl),
            "gold_only" => Ok(Method::GoldOnly),
            other => other.parse().map(Method::Locco).map_err(|_| {
                format!(
                    "unknown method {other:?} (expected full, cc_only, prior_only, unit, \
                     greedy_sl, sampling_sl or gold_only)"
                )
            }),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.name().to_string()
    }
}

/// All knobs of one training run. `Default` holds the reference
/// hyperparameters (plain SGD at a fine-tuning learning rate);
/// [`IterationConfig::desk`] holds settings that make the small reference
/// model converge on the synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    /// K
    pub iterations: u32,
    /// N
    pub samples: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub sigma_floor: f64,
    pub ratio_ceiling: f64,
    pub lr: f64,
    /// Warm-up learning rate; `lr` when unset.
    pub warmup_lr: Option<f64>,
    pub batch_size: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub method: Method,
    pub epochs_per_iteration: usize,
    /// Upper bound on warm-up epochs (early stopping usually ends sooner).
    pub warmup_epochs: usize,
    pub patience: usize,
    /// Validation cadence during iterations; `max(50, inputs / 10)` when unset.
    pub eval_every_steps: Option<usize>,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Add the previous table's counts into each new prior table.
    pub carry_counts: bool,
    /// Drop unparseable samples before the parser update.
    pub filter_malformed: bool,
    /// Copies of each gold pair in the update pool.
    pub gold_repeats: usize,
    pub workers: usize,
    #[serde(rename = "domain")]
    pub kind: FormKind,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            samples: 5,
            tau: 1.0,
            epsilon: DEFAULT_EPSILON,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            ratio_ceiling: DEFAULT_RATIO_CEILING,
            lr: 5e-6,
            warmup_lr: None,
            batch_size: 8,
            temperature: 1.0,
            top_p: 0.95,
            method: Method::Locco(RewardMode::Full),
            epochs_per_iteration: 1,
            warmup_epochs: 100,
            patience: 5,
            eval_every_steps: None,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            carry_counts: false,
            filter_malformed: false,
            gold_repeats: 1,
            workers: 1,
            kind: FormKind::Triples,
        }
    }
}

impl IterationConfig {
    /// Adam at learning rates the small reference model trains with.
    pub fn desk() -> Self {
        Self {
            lr: 3e-5,
            warmup_lr: Some(3e-3),
            optimizer: OptimizerKind::Adam,
            epochs_per_iteration: 3,
            warmup_epochs: 150,
            patience: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if self.iterations < 1 {
            return bad("iterations (K) must be at least 1".into());
        }
        if self.samples < 1 {
            return bad("samples (N) must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.workers < 1 {
            return bad("workers must be at least 1".into());
        }
        if self.gold_repeats < 1 {
            return bad("gold_repeats must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        for (name, lr) in [("lr", Some(self.lr)), ("warmup_lr", self.warmup_lr)] {
            if let Some(lr) = lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad(format!("{name} must be positive, got {lr}"));
                }
            }
        }
        if self.eval_every_steps == Some(0) {
            return bad("eval_every_steps must be positive".into());
        }
        self.reward().validate().map_err(|e| TrainingError::Config(e.to_string()))?;
        self.sampling().validate().map_err(|e| TrainingError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            epsilon: self.epsilon,
            sigma_floor: self.sigma_floor,
            mode: self.method.reward_mode(),
            ratio_ceiling: self.ratio_ceiling,
        }
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }

    pub fn warmup_learning_rate(&self) -> f64 {
        self.warmup_lr.unwrap_or(self.lr)
    }

    /// Samples drawn per input: one for greedy self-learning, N otherwise.
    pub fn samples_per_input(&self) -> usize {
        if self.method == Method::GreedySl {
            1
        } else {
            self.samples
        }
    }

    pub fn eval_interval(&self, inputs: usize) -> usize {
        self.eval_every_steps.unwrap_or_else(|| (inputs / 10).max(50))
    }
}
