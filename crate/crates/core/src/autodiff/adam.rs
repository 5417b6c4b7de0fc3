//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults are the standard lr 1e-3, beta1 0.9,
/// beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state; one instance per flat parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam { cfg: AdamConfig, m: Vec<f64>, v: Vec<f64>, t: u64 },
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn adam(n_params: usize, cfg: AdamConfig) -> Self {
        Self::Adam { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::Sgd { lr }
    }

    /// One in-place descent step. Adam uses bias-corrected first and second
    /// moment estimates.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        match self {
            Self::Adam { cfg, m, v, t } => {
                if m.len() != params.len() {
                    return Err(Error::Shape(format!(
                        "optimizer state sized for {} parameters, got {}",
                        m.len(),
                        params.len()
                    )));
                }
                *t += 1;
                let bc1 = 1.0 - cfg.beta1.powi(*t as i32);
                let bc2 = 1.0 - cfg.beta2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
            Self::Sgd { lr } => {
                for i in 0..params.len() {
                    params[i] -= *lr * grads[i];
                }
            }
        }
        Ok(())
    }
}
