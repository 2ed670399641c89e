use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::nets::{Grads, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn for_params<P: Parameterized>(config: AdamConfig, params: &P) -> Self {
        Self::new(config, params.values().len())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam update. A non-finite gradient rejects the step and
/// leaves both parameters and state untouched.
pub fn optimizer_step<P: Parameterized>(params: &mut P, grads: &Grads, state: &mut OptimizerState) -> Result<()> {
    let values = params.values_mut();
    if values.len() != grads.0.len() || values.len() != state.m.len() {
        return Err(Error::Config(format!(
            "optimizer shape mismatch: params {}, grads {}, state {}",
            values.len(),
            grads.0.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.0.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} = {} at optimizer step {}",
            grads.0[i],
            state.step + 1
        )));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, &g), m), v) in values.iter_mut().zip(&grads.0).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
