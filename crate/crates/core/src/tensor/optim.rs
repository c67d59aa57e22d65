//! Adam with bias correction, and the Noam warmup schedule.
//!
//! ```text
//! m ← β₁·m + (1−β₁)·g
//! v ← β₂·v + (1−β₂)·g²
//! θ ← θ − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
//!
//! noam(t) = base · d^(−1/2) · min(t^(−1/2), t · warmup^(−3/2))
//! ```

use super::params::{ParamGrads, ParamStore};
use super::Real;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
        }
    }
}

/// First/second moment buffers and the update counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Vec<T>> {
            params
                .iter()
                .map(|(_, _, t)| vec![T::zero(); t.numel()])
                .collect()
        };
        OptimizerState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.first[index]
    }
}

pub struct Adam;

impl Adam {
    /// One Adam update of every parameter from `grads`.
    pub fn step<T: Real>(
        params: &mut ParamStore<T>,
        grads: &ParamGrads<T>,
        state: &mut OptimizerState<T>,
        learning_rate: f64,
    ) {
        state.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = state.config;
        let t = state.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (c1, c2) = (T::of(correction1), T::of(correction2));
        let lr = T::of(learning_rate);
        let eps = T::of(epsilon);

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = &mut state.first[id.index()];
            let v = &mut state.second[id.index()];
            let theta = params.get_mut(id).data_mut();
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Noam learning rate at 1-based `step`.
pub fn noam_rate(step: u64, warmup: u64, base: f64, model_dim: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::Domain("noam schedule is defined for step >= 1".into()));
    }
    if warmup == 0 || model_dim == 0 {
        return Err(Error::Domain(
            "noam schedule needs positive warmup and model dimension".into(),
        ));
    }
    let s = step as f64;
    let decay = s.powf(-0.5);
    let ramp = s * (warmup as f64).powf(-1.5);
    Ok(base * (model_dim as f64).powf(-0.5) * decay.min(ramp))
}
