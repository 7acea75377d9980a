use super::tensor::NetParams;
use crate::error::{Error, Result};

/// Learning-rate multiplier applied every [`LR_DECAY_EVERY`] steps.
pub const LR_DECAY: f64 = 0.8;
pub const LR_DECAY_EVERY: u64 = 3000;

/// Step-function schedule: `base · 0.8^⌊step / 3000⌋`.
pub fn lr_at(base: f64, step: u64) -> f64 {
    base * LR_DECAY.powi((step / LR_DECAY_EVERY) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of updates applied so far.
    pub step: u64,
    pub base_lr: f64,
    /// Learning rate used by the most recent update.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetParams, base_lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            base_lr,
            lr: lr_at(base_lr, 0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored on `params`.
pub fn adam_step(params: &mut NetParams, state: &mut AdamState) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} tensors, parameter set has {}",
            state.m.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        let t = params.get(id);
        if t.grad.is_none() {
            return Err(Error::State(format!("missing gradient for `{}`", params.name(id))));
        }
        if state.m[id.index()].len() != t.len() {
            return Err(Error::State(format!("moment shape mismatch for `{}`", params.name(id))));
        }
    }
    let lr = lr_at(state.base_lr, state.step);
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for id in params.ids() {
        let i = id.index();
        let tensor = params.get_mut(id);
        let grad = tensor.grad.as_ref().expect("checked above");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..grad.len() {
            let gk = grad[k];
            if !gk.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {i}")));
            }
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            tensor.values[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    state.lr = lr;
    state.step += 1;
    Ok(())
}
