//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::transformer::{loss, loss_and_grads};
use super::weights::Weights;
use crate::budget::ModelConfig;
use crate::data::Batch;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    /// Flat index across all tensors in layout order.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `count` distinct flat weight indices, drawn without replacement.
pub fn sample_weight_indices(weights: &Weights<f64>, count: usize, seed: u64) -> Vec<usize> {
    let total = weights.numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, total, count.min(total)).into_vec();
    idx.sort_unstable();
    idx
}

fn locate(weights: &Weights<f64>, flat: usize) -> Option<(usize, usize)> {
    let mut offset = flat;
    for (t, tensor) in weights.tensors().iter().enumerate() {
        if offset < tensor.len() {
            return Some((t, offset));
        }
        offset -= tensor.len();
    }
    None
}

pub fn finite_diff_samples(
    weights: &Weights<f64>,
    config: &ModelConfig,
    batch: &Batch,
    sample_indices: &[usize],
    epsilon: f64,
) -> Result<Vec<GradSample>> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [1e-6, 1e-3], got {epsilon}")));
    }
    let (_, grads) = loss_and_grads(weights, config, batch)?;
    let grad_tensors = grads.tensors();
    let mut probe = weights.clone();
    sample_indices
        .iter()
        .map(|&index| {
            let (t, i) = locate(weights, index)
                .ok_or_else(|| Error::invalid(format!("weight index {index} out of range")))?;
            let original = weights.tensors()[t][i];
            probe.tensors_mut()[t][i] = original + epsilon;
            let up = loss(&probe, config, batch)?;
            probe.tensors_mut()[t][i] = original - epsilon;
            let down = loss(&probe, config, batch)?;
            probe.tensors_mut()[t][i] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let analytic = grad_tensors[t][i];
            let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            Ok(GradSample { index, analytic, numeric, rel_error })
        })
        .collect()
}

/// Largest relative disagreement between analytic and central-difference
/// gradients over the sampled weights.
pub fn finite_diff_check(
    weights: &Weights<f64>,
    config: &ModelConfig,
    batch: &Batch,
    sample_indices: &[usize],
    epsilon: f64,
) -> Result<f64> {
    Ok(finite_diff_samples(weights, config, batch, sample_indices, epsilon)?
        .iter()
        .map(|s| s.rel_error)
        .fold(0.0, f64::max))
}
