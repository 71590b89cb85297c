use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment estimates with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// First moment (running mean of gradients).
    pub m: Vec<f64>,
    /// Second moment (running mean of squared gradients).
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One in-place step on `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        Error::check_len("adam gradients", params.len(), grads.len())?;
        Error::check_len("adam state", params.len(), self.m.len())?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_update(
    params: &[f64],
    grads: &[f64],
    state: &AdamState,
    lr: f64,
) -> Result<(Vec<f64>, AdamState)> {
    let mut next = params.to_vec();
    let mut state = state.clone();
    state.step(&mut next, grads, lr)?;
    Ok((next, state))
}
