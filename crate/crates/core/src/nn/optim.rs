use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Model, Params};
use crate::error::{invalid, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Params, eta: f64) -> Result<AdamState> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        let zeros: Vec<Vec<f64>> = params.list.iter().map(|p| alloc::vec![0.0; p.data.len()]).collect();
        Ok(AdamState { m: zeros.clone(), v: zeros, t: 0, eta, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS })
    }

    /// One bias-corrected Adam update of the model's parameters.
    pub fn step(&mut self, model: &mut Model, grads: &Params) -> Result<()> {
        model.params.check_layout(grads)?;
        if self.m.len() != grads.list.len() || self.m.iter().zip(&grads.list).any(|(m, g)| m.len() != g.data.len()) {
            return Err(crate::Error::ShapeMismatch {
                expected: self.m.iter().map(Vec::len).sum(),
                got: grads.count(),
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for (k, (p, g)) in model.params.list.iter_mut().zip(&grads.list).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.eta * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, model: &mut Model, grads: &Params) -> Result<()> {
    state.step(model, grads)
}
