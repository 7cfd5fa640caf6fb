use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates aligned with the parameter order of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
    pub epoch: usize,
    pub config: AdamConfig,
}

impl OptimState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        OptimState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            lr,
            epoch: 0,
            config: AdamConfig::default(),
        }
    }
}

/// Bias-corrected Adam update of every parameter. `grads` follows the
/// store order. Nothing is modified if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut OptimState) -> Result<(), TrainError> {
    let names = store.names().to_vec();
    if grads.len() != names.len() {
        return Err(TrainError::GradientShape {
            name: format!("{} gradients for {} parameters", grads.len(), names.len()),
        });
    }
    for (name, g) in names.iter().zip(grads) {
        if g.shape() != store.get(name).expect("own name").shape() {
            return Err(TrainError::GradientShape { name: name.clone() });
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient { name: name.clone() });
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (p, (name, g)) in names.iter().zip(grads).enumerate() {
        let m = state.first[p].data_mut();
        let v = state.second[p].data_mut();
        let w = store.get_mut(name).expect("own name").data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= state.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
