use serde::{Deserialize, Serialize};

use super::model::LmWeights;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers shaped like the parameters they update.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: LmWeights<T>,
    pub v: LmWeights<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &LmWeights<T>) -> Self {
        Self {
            config,
            m: LmWeights::zeros_like(params),
            v: LmWeights::zeros_like(params),
            step: 0,
        }
    }

    /// One bias-corrected Adam step. `names` label parameters in errors; a
    /// non-finite gradient aborts before anything is modified.
    pub fn update(&mut self, params: &mut LmWeights<T>, grads: &LmWeights<T>, names: &[String]) -> Result<()> {
        for (i, g) in grads.tensors.iter().enumerate() {
            if !g.all_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFinite(name));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (c.beta1, c.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t) = (T::c(b1), T::c(b2));
        let (ob1, ob2) = (T::c(1.0 - b1), T::c(1.0 - b2));
        let step_size = T::c(c.lr / bc1);
        let inv_sqrt_bc2 = T::c(1.0 / bc2.sqrt());
        let eps = T::c(c.eps);
        for (((w, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            for (((w, &g), m), v) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1t * *m + ob1 * g;
                *v = b2t * *v + ob2 * g * g;
                let denom = v.sqrt() * inv_sqrt_bc2 + eps;
                *w = *w - step_size * *m / denom;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut LmWeights<T>, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::c(max_norm / norm));
    }
    norm
}
