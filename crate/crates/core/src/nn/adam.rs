//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

/// Adam hyperparameters. Defaults: lr 5e-4, β₁ 0.9, β₂ 0.999, ε 1e-8.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("Adam learning rate must be positive".into()));
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config("Adam betas must lie in (0,1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Applies one bias-corrected Adam update in place to every trainable
/// parameter, using the gradients currently accumulated in the store.
///
/// `step` is 1-based. If any gradient is non-finite the whole step is
/// rejected before touching parameters or moments, so the caller can log and
/// skip the batch.
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, config: &AdamConfig, step: u64) -> Result<()> {
    config.validate()?;
    if step < 1 {
        return Err(Error::Config("Adam step index must be ≥ 1".into()));
    }
    for (name, entry) in store.iter() {
        if entry.trainable && !entry.grad.all_finite() {
            return Err(Error::domain(format!(
                "non-finite gradient for '{name}'; step rejected"
            )));
        }
    }

    let b1 = S::from_f64_c(config.beta1);
    let b2 = S::from_f64_c(config.beta2);
    let one = S::one();
    // Bias corrections in f64: β^t underflows gracefully and stays exact
    // longer than in f32.
    let corr1 = S::from_f64_c(1.0 - config.beta1.powi(step as i32));
    let corr2 = S::from_f64_c(1.0 - config.beta2.powi(step as i32));
    let lr = S::from_f64_c(config.learning_rate);
    let eps = S::from_f64_c(config.epsilon);

    for (_, entry) in store.iter_mut() {
        if !entry.trainable {
            continue;
        }
        let grads = entry.grad.as_slice().to_vec();
        let m = entry.m.as_mut_slice();
        let v = entry.v.as_mut_slice();
        let p = entry.value.as_mut_slice();
        for i in 0..grads.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
