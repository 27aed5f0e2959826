//! AdamW with decoupled weight decay, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::weights::{tensor_layout, Weights};
use crate::budget::ModelConfig;
use crate::error::{Error, Result};
use crate::float::Scalar;
use crate::trainer::MetricsLog;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

/// First and second moment estimates plus the number of updates taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T> {
    pub m: Weights<T>,
    pub v: Weights<T>,
    pub step: u64,
    decay: Vec<bool>,
}

impl<T: Scalar> OptState<T> {
    pub fn new(config: &ModelConfig) -> Self {
        OptState {
            m: Weights::zeros(config),
            v: Weights::zeros(config),
            step: 0,
            decay: tensor_layout(config).iter().map(|t| t.decays()).collect(),
        }
    }
}

/// One AdamW update in place. Norm gains and the embedding table are not
/// decayed.
pub fn adamw_step<T: Scalar>(
    weights: &mut Weights<T>,
    grads: &Weights<T>,
    state: &mut OptState<T>,
    hp: &AdamW,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::TrainingDivergence {
            step: state.step as usize + 1,
            reason: "non-finite gradient".into(),
            partial: Box::new(MetricsLog::default()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - hp.beta1), T::of(1.0 - hp.beta2));
    let step_size = T::of(hp.lr / bc1);
    let inv_bc2_sqrt = T::of(1.0 / bc2.sqrt());
    let eps = T::of(hp.eps);
    let shrink = T::of(1.0 - hp.lr * hp.weight_decay);

    let ws = weights.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((w, g), m), v), &decay) in ws.into_iter().zip(gs).zip(ms).zip(vs).zip(&state.decay) {
        for i in 0..w.len() {
            if decay {
                w[i] = w[i] * shrink;
            }
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            w[i] = w[i] - step_size * m[i] / (v[i].sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}

/// Scales `grads` so their global norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Weights<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = T::of(max_norm / (norm + 1e-6));
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g = *g * scale);
        }
    }
    norm
}
