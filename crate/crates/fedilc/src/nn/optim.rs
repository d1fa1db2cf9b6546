//! Adam with decoupled weight decay, plus a plain SGD fallback.

use crate::error::{Error, Result};

/// Adam moments and hyperparameters. `weight_decay` is decoupled: the
/// parameters are scaled by `1 - lr * wd` before the moment update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam step with bias correction, in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam state sized {}, params {}, grad {}",
            state.m.len(),
            params.len(),
            grad.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let decay = 1.0 - state.lr * state.weight_decay;
    for i in 0..params.len() {
        params[i] *= decay;
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Plain gradient descent step with the same decoupled decay as Adam.
pub fn sgd_step(lr: f64, weight_decay: f64, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {} vs grad {}",
            params.len(),
            grad.len()
        )));
    }
    let decay = 1.0 - lr * weight_decay;
    for (p, &g) in params.iter_mut().zip(grad.iter()) {
        *p = *p * decay - lr * g;
    }
    Ok(())
}

/// Server-side optimizer choice.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64, weight_decay: f64 },
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self {
            Optimizer::Adam(state) => adam_step(state, params, grad),
            Optimizer::Sgd { lr, weight_decay } => sgd_step(*lr, *weight_decay, params, grad),
        }
    }
}
