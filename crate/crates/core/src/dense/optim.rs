use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::EncoderParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-stage learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Linear ramp from 0 over the first `warmup` fraction of the steps,
    /// then linear decay to 0 at the last step.
    Linear { warmup: f64 },
}

impl LrSchedule {
    /// Multiplier for 0-based `step` of a stage lasting `total` steps.
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear { warmup } => {
                let w = (warmup * total as f64).ceil() as usize;
                if step < w {
                    step as f64 / w as f64
                } else if total > w {
                    (total - step) as f64 / (total - w) as f64
                } else {
                    1.0
                }
            }
        }
    }
}

/// Adam moments, one pair of matrices per embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub(crate) m: Vec<Matrix>,
    pub(crate) v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .tables()
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        OptimizerState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn shapes_match(&self, params: &EncoderParams) -> bool {
        let tables = params.tables();
        tables.len() == self.m.len()
            && tables.iter().zip(&self.m).zip(&self.v).all(|((t, m), v)| {
                (t.rows(), t.cols()) == (m.rows(), m.cols())
                    && (t.rows(), t.cols()) == (v.rows(), v.cols())
            })
    }

    /// One bias-corrected Adam update with the given (already averaged)
    /// gradients, one matrix per table.
    pub fn apply(&mut self, params: &mut EncoderParams, grads: &[Matrix]) -> Result<()> {
        if !self.shapes_match(params) || grads.len() != self.m.len() {
            return Err(Error::Invalid("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((table, g), m), v) in params
            .tables_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in table
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps) + weight_decay * *p;
                *p -= lr * update;
            }
        }
        params.bump_version();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_shape() {
        let s = LrSchedule::Linear { warmup: 0.1 };
        let f: Vec<f64> = (0..20).map(|i| s.factor(i, 20)).collect();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 0.5);
        assert_eq!(f[2], 1.0);
        assert!(f.windows(2).skip(2).all(|w| w[1] < w[0]));
        assert!((f[19] - 1.0 / 18.0).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.factor(7, 9), 1.0);
        assert_eq!(LrSchedule::Linear { warmup: 0.0 }.factor(0, 4), 1.0);
    }
}
