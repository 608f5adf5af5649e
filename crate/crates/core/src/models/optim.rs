use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
        }
    }
}

/// Turns an ascent gradient into a parameter delta.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, num_parameters: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; num_parameters],
                v: vec![0.0; num_parameters],
                t: 0,
            },
        }
    }

    /// `grad` is the (already batch-averaged) ascent direction.
    pub fn delta(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        match self {
            Optimizer::Sgd => grad.iter().map(|g| lr * g).collect(),
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                grad.iter()
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|(&g, (mi, vi))| {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                        lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS)
                    })
                    .collect()
            }
        }
    }
}
