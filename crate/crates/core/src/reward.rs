//! Sample weighting: raw values, per-group z-score advantages, importance
//! ratios against the sampling-time parser, and the clipped surrogate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;
pub const DEFAULT_RATIO_CEILING: f64 = 1e6;

/// Which terms make up the raw value of a sampled structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// log p(x|z) + log p(z)
    Full,
    /// log p(x|z) only.
    CcOnly,
    /// log p(z) only.
    PriorOnly,
    /// Every sample weighted 1: plain self-learning.
    Unit,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::Full => "full",
            RewardMode::CcOnly => "cc_only",
            RewardMode::PriorOnly => "prior_only",
            RewardMode::Unit => "unit",
        }
    }

    pub fn uses_generator(self) -> bool {
        matches!(self, RewardMode::Full | RewardMode::CcOnly)
    }

    pub fn uses_prior(self) -> bool {
        matches!(self, RewardMode::Full | RewardMode::PriorOnly)
    }
}

impl std::str::FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(RewardMode::Full),
            "cc_only" => Ok(RewardMode::CcOnly),
            "prior_only" => Ok(RewardMode::PriorOnly),
            "unit" => Ok(RewardMode::Unit),
            other => Err(format!(
                "unknown reward mode {other:?} (expected full, cc_only, prior_only or unit)"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("clip radius must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("sigma floor must be positive, got {0}")]
    SigmaFloor(f64),
    #[error("ratio ceiling must be at least 1, got {0}")]
    RatioCeiling(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub epsilon: f64,
    pub sigma_floor: f64,
    pub mode: RewardMode,
    pub ratio_ceiling: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            mode: RewardMode::Full,
            ratio_ceiling: DEFAULT_RATIO_CEILING,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(RewardError::Epsilon(self.epsilon));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(RewardError::SigmaFloor(self.sigma_floor));
        }
        if !(self.ratio_ceiling >= 1.0) {
            return Err(RewardError::RatioCeiling(self.ratio_ceiling));
        }
        Ok(())
    }
}

/// V(z, x) under the given mode.
pub fn raw_value(log_px_given_z: f64, log_pz: f64, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::Full => log_px_given_z + log_pz,
        RewardMode::CcOnly => log_px_given_z,
        RewardMode::PriorOnly => log_pz,
        RewardMode::Unit => 1.0,
    }
}

/// Z-scores with the population standard deviation. All zeros when the
/// spread is below `sigma_floor`.
///
/// Deviations are computed from pairwise differences, `(Σ_j v_i - v_j) / n`,
/// so a shift that is exact in floating point leaves the output bit-identical.
pub fn normalize(values: &[f64], sigma_floor: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let deviations: Vec<f64> = values
        .iter()
        .map(|&vi| values.iter().map(|&vj| vi - vj).sum::<f64>() / n)
        .collect();
    let sigma = (deviations.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    if !(sigma >= sigma_floor) {
        return vec![0.0; values.len()];
    }
    deviations.iter().map(|d| d / sigma).collect()
}

/// q(z|x; φ_new) / q(z|x; φ_old), capped at `ceiling`.
pub fn importance_ratio(logq_new: f64, logq_old: f64, ceiling: f64) -> f64 {
    (logq_new - logq_old).exp().min(ceiling)
}

/// min(r·a, clip(r, 1-ε, 1+ε)·a)
pub fn clipped_weight(r: f64, a: f64, epsilon: f64) -> f64 {
    let clipped = r.clamp(1.0 - epsilon, 1.0 + epsilon);
    (r * a).min(clipped * a)
}

/// Weights for one group of samples drawn for the same input.
///
/// `values` are the stored raw values; `logq_new`/`logq_old` the sample
/// scores under the current and sampling-time parser. In unit mode the
/// group is not normalized and every weight is exactly 1.
pub fn group_weights(
    values: &[f64],
    logq_new: &[f64],
    logq_old: &[f64],
    config: &RewardConfig,
) -> Vec<f64> {
    if config.mode == RewardMode::Unit {
        return vec![1.0; values.len()];
    }
    let advantages = normalize(values, config.sigma_floor);
    weights_from_advantages(&advantages, logq_new, logq_old, config)
}

/// Clipped weights for precomputed advantages (used when advantages are
/// normalized over a wider scope than the group).
pub fn weights_from_advantages(
    advantages: &[f64],
    logq_new: &[f64],
    logq_old: &[f64],
    config: &RewardConfig,
) -> Vec<f64> {
    advantages
        .iter()
        .zip(logq_new.iter().zip(logq_old))
        .map(|(&a, (&new, &old))| {
            let r = importance_ratio(new, old, config.ratio_ceiling);
            clipped_weight(r, a, config.epsilon)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn raw_value_modes() {
        assert_eq!(raw_value(-2.0, -3.0, RewardMode::Full), -5.0);
        assert_eq!(raw_value(-2.0, -3.0, RewardMode::CcOnly), -2.0);
        assert_eq!(raw_value(-2.0, -3.0, RewardMode::PriorOnly), -3.0);
        assert_eq!(raw_value(-2.0, -3.0, RewardMode::Unit), 1.0);
    }

    #[test]
    fn normalize_hand_values() {
        let a = normalize(&[1.0, 2.0, 3.0], DEFAULT_SIGMA_FLOOR);
        let s = 1.5f64.sqrt();
        assert!((a[0] + s).abs() < 1e-12);
        assert!(a[1].abs() < 1e-12);
        assert!((a[2] - s).abs() < 1e-12);
        assert_eq!(normalize(&[5.0, 5.0, 5.0], DEFAULT_SIGMA_FLOOR), vec![0.0; 3]);
        assert_eq!(normalize(&[-4.2], DEFAULT_SIGMA_FLOOR), vec![0.0]);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(importance_ratio(-2.0, -2.0, DEFAULT_RATIO_CEILING), 1.0);
        assert!((importance_ratio(-1.0, -2.0, DEFAULT_RATIO_CEILING) - std::f64::consts::E).abs() < 1e-12);
        assert!((importance_ratio(-2.0, -1.0, DEFAULT_RATIO_CEILING) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(importance_ratio(0.0, -1000.0, DEFAULT_RATIO_CEILING), 1e6);
    }

    #[test]
    fn clipped_examples() {
        assert!((clipped_weight(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        // min(0.5 * -1, 0.8 * -1) = min(-0.5, -0.8)
        assert_eq!(clipped_weight(0.5, -1.0, 0.2), -0.8);
        for a in [-2.5, -1.0, 0.0, 0.3, 7.0] {
            assert_eq!(clipped_weight(1.0, a, 0.2), a);
        }
    }

    #[test]
    fn unit_mode_bypasses_everything() {
        let cfg = RewardConfig { mode: RewardMode::Unit, ..Default::default() };
        let w = group_weights(&[-9.0, 3.0, 0.1], &[-1.0, -50.0, 0.0], &[-3.0, -1.0, -2.0], &cfg);
        assert_eq!(w, vec![1.0; 3]);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig { epsilon: 1.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(RewardError::Epsilon(1.0)));
        let bad = RewardConfig { sigma_floor: 0.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(RewardError::SigmaFloor(0.0)));
    }

    proptest! {
        #[test]
        fn inside_band_is_plain_product(r in 0.8f64..=1.2, a in -3.0f64..3.0) {
            prop_assert_eq!(clipped_weight(r, a, 0.2), r * a);
        }

        #[test]
        fn never_exceeds_either_term(r in 0.0f64..3.0, a in -3.0f64..3.0, eps in 0.05f64..0.5) {
            let w = clipped_weight(r, a, eps);
            prop_assert!(w <= r * a);
            if a > 0.0 {
                prop_assert!(w <= (1.0 + eps) * a);
            }
        }

        #[test]
        fn normalized_moments(values in prop::collection::vec(-50.0f64..50.0, 2..12)) {
            let a = normalize(&values, DEFAULT_SIGMA_FLOOR);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let spread = values.iter().cloned().fold(f64::MIN, f64::max)
                - values.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-6 {
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn affine_invariance(values in prop::collection::vec(-20.0f64..20.0, 1..8),
                             scale in 0.01f64..100.0, shift in -100.0f64..100.0) {
            let base = normalize(&values, DEFAULT_SIGMA_FLOOR);
            let moved: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
            let spread = values.iter().cloned().fold(f64::MIN, f64::max)
                - values.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-6 {
                for (x, y) in base.iter().zip(normalize(&moved, DEFAULT_SIGMA_FLOOR)) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn exact_shift_is_bit_exact(grid in prop::collection::vec(-4096i64..4096, 1..8), c in -4096i64..4096) {
            // Multiples of 1/64 with a bounded range: every shift and
            // pairwise difference is exact in f64.
            let values: Vec<f64> = grid.iter().map(|&g| g as f64 / 64.0).collect();
            let shifted: Vec<f64> = values.iter().map(|v| v + c as f64).collect();
            prop_assert_eq!(normalize(&values, DEFAULT_SIGMA_FLOOR), normalize(&shifted, DEFAULT_SIGMA_FLOOR));
        }
    }
}
