//! Adam with bias correction, linear learning-rate warmup, and global-norm
//! gradient clipping.

use std::collections::HashMap;

use super::params::{ParamId, Params};
use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from zero to `lr`.
    /// Zero disables warmup.
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
        }
    }
}

impl AdamConfig {
    /// Effective learning rate at 1-indexed step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (t as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

struct Slot<S: Scalar> {
    m: Vec<S>,
    v: Vec<S>,
}

/// First/second-moment state is keyed by parameter id and lazily created, so
/// one optimizer instance can drive any subset of the parameter store.
pub struct Adam<S: Scalar> {
    pub config: AdamConfig,
    step: usize,
    slots: HashMap<ParamId, Slot<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            slots: HashMap::new(),
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update. `grads` pairs each parameter with its gradient
    /// (same element count as the parameter); parameters absent from the list
    /// are untouched. Call [`clip_global_norm`] beforehand if clipping.
    pub fn step(&mut self, params: &mut Params<S>, grads: &[(ParamId, Vec<S>)]) {
        self.step += 1;
        let t = self.step;
        let lr = S::from_f64(self.config.lr_at(t));
        let b1 = S::from_f64(self.config.beta1);
        let b2 = S::from_f64(self.config.beta2);
        let eps = S::from_f64(self.config.eps);
        let bc1 = S::from_f64(1.0 - self.config.beta1.powi(t as i32));
        let bc2 = S::from_f64(1.0 - self.config.beta2.powi(t as i32));

        for (id, g) in grads {
            let tensor = params.get(*id);
            assert_eq!(
                tensor.numel(),
                g.len(),
                "gradient length mismatch for {}",
                params.name(*id)
            );
            let slot = self.slots.entry(*id).or_insert_with(|| Slot {
                m: vec![S::zero(); g.len()],
                v: vec![S::zero(); g.len()],
            });
            let mut data = tensor.data().to_vec();
            for i in 0..g.len() {
                slot.m[i] = b1 * slot.m[i] + (S::one() - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (S::one() - b2) * g[i] * g[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            let shape = tensor.shape().to_vec();
            params.set(*id, Tensor::from_vec(shape, data).expect("same shape"));
        }
    }
}

/// Scales all gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [(ParamId, Vec<S>)], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for (_, g) in grads.iter() {
        for v in g {
            let f = v.into_f64();
            sq += f * f;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.iter_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}
