//! Training runs, validation perplexity and multi-variant comparisons.

mod compare;
mod metrics;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::budget::ModelConfig;
use crate::data::{sampler_rng, with_prefetch, Batch, Corpus};
use crate::error::{Error, Result};
use crate::model::{adamw_step, clip_grad_norm, init_model, loss, loss_and_grads, save_checkpoint, AdamW, OptState, Weights};

pub use compare::{compare_variants, equalize_variants, CompareOptions, Comparison, VariantRun, BUDGET_GATE};
pub use metrics::{MetricsLog, MetricsRow, METRICS_HEADER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences per step.
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub eval_interval: usize,
    pub eval_tokens: usize,
    pub seed: u64,
    /// When false the throughput and wall-clock columns are written as zero,
    /// which makes metrics files byte-reproducible.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// Peak lr 6e-4 with AdamW (0.9, 0.95), clipping at 1.0 and 2% warmup.
    pub fn with_steps(steps: usize) -> Self {
        TrainConfig {
            steps,
            batch_size: 8,
            seq_len: 128,
            lr: 6e-4,
            warmup_steps: (steps / 50).max(1),
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip_norm: 1.0,
            eval_interval: (steps / 10).max(1),
            eval_tokens: 8192,
            seed: 0,
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.eval_interval == 0 || self.eval_interval > self.steps {
            return Err(Error::invalid(format!(
                "eval_interval must lie in [1, steps], got {}",
                self.eval_interval
            )));
        }
        if self.batch_size == 0 || self.seq_len == 0 || self.eval_tokens < self.seq_len {
            return Err(Error::invalid("batch_size, seq_len and eval_tokens (≥ seq_len) must be positive"));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(Error::invalid("grad_clip_norm must be positive"));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Learning rate for 1-based `step`: linear warmup to the peak, then
    /// constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * step as f64 / self.warmup_steps as f64
        } else {
            self.lr
        }
    }
}

pub fn ppl_from_loss(loss: f64) -> f64 {
    loss.exp()
}

/// Mean cross-entropy over consecutive non-overlapping `seq_len` windows at
/// the start of `val`, covering `eval_tokens` predicted tokens (rounded down
/// to whole windows), and its perplexity.
pub fn evaluate_perplexity(
    weights: &Weights<f32>,
    config: &ModelConfig,
    val: &[u8],
    seq_len: usize,
    eval_tokens: usize,
) -> Result<(f64, f64)> {
    if seq_len == 0 {
        return Err(Error::invalid("seq_len must be positive"));
    }
    let windows = eval_tokens / seq_len;
    if windows == 0 {
        return Err(Error::invalid("eval_tokens is smaller than one window"));
    }
    if windows * seq_len + 1 > val.len() {
        return Err(Error::InsufficientData(format!(
            "validation split has {} tokens, evaluation needs {}",
            val.len(),
            windows * seq_len + 1
        )));
    }
    const CHUNK: usize = 8;
    let starts: Vec<usize> = (0..windows).map(|w| w * seq_len).collect();
    let mut total = 0.0;
    for chunk in starts.chunks(CHUNK) {
        let batch = Batch::from_windows(val, chunk, seq_len);
        total += loss(weights, config, &batch)? * chunk.len() as f64;
    }
    let mean = total / windows as f64;
    Ok((mean, ppl_from_loss(mean)))
}

/// Batches kept queued ahead of the optimizer.
const PREFETCH_DEPTH: usize = 2;

/// Trains a freshly initialized model. The model is seeded with
/// `train_config.seed` and batches are drawn from a sampler seeded with the
/// same value, so identical inputs give identical loss traces.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    corpus: &Corpus,
    checkpoint_dir: Option<&Path>,
) -> Result<(Weights<f32>, MetricsLog)> {
    model_config.validate()?;
    train_config.validate()?;
    if train_config.seq_len > model_config.max_seq_len {
        return Err(Error::invalid(format!(
            "seq_len {} exceeds the model's {}",
            train_config.seq_len, model_config.max_seq_len
        )));
    }
    if corpus.val.len() < train_config.eval_tokens + 1 {
        return Err(Error::InsufficientData(format!(
            "validation split has {} tokens, evaluation needs {}",
            corpus.val.len(),
            train_config.eval_tokens + 1
        )));
    }
    if corpus.train.len() <= train_config.seq_len + 1 {
        return Err(Error::InsufficientData("training split shorter than one window".into()));
    }

    let tc = train_config;
    let mut weights: Weights<f32> = init_model(model_config, tc.seed);
    let mut state = OptState::new(model_config);
    let mut log = MetricsLog::default();
    let tokens_per_step = (tc.batch_size * tc.seq_len) as u64;
    let start = Instant::now();
    let mut train_secs = 0.0f64;

    let outcome = with_prefetch(corpus, tc.batch_size, tc.seq_len, sampler_rng(tc.seed), PREFETCH_DEPTH, |batches| {
        for step in 1..=tc.steps {
            let batch = batches.next().expect("producer runs until dropped")?;
            let t0 = Instant::now();
            let (train_loss, mut grads) = loss_and_grads(&weights, model_config, &batch)?;
            let diverged = |reason: &str, log: &MetricsLog| Error::TrainingDivergence {
                step,
                reason: reason.into(),
                partial: Box::new(log.clone()),
            };
            if !train_loss.is_finite() {
                return Err(diverged("non-finite training loss", &log));
            }
            clip_grad_norm(&mut grads, tc.grad_clip_norm);
            let hp = AdamW { lr: tc.lr_at(step), ..tc.optimizer() };
            adamw_step(&mut weights, &grads, &mut state, &hp).map_err(|_| diverged("non-finite gradient", &log))?;
            train_secs += t0.elapsed().as_secs_f64();

            let (val_loss, val_ppl) = if step % tc.eval_interval == 0 || step == tc.steps {
                let (l, p) = evaluate_perplexity(&weights, model_config, &corpus.val, tc.seq_len, tc.eval_tokens)?;
                if !l.is_finite() {
                    return Err(diverged("non-finite validation loss", &log));
                }
                (Some(l), Some(p))
            } else {
                (None, None)
            };
            let tokens_seen = step as u64 * tokens_per_step;
            let (tokens_per_sec, wall_clock_s) = if tc.record_timing {
                (tokens_seen as f64 / train_secs.max(1e-9), start.elapsed().as_secs_f64())
            } else {
                (0.0, 0.0)
            };
            log.push(MetricsRow { step, tokens_seen, train_loss, val_loss, val_ppl, tokens_per_sec, wall_clock_s });
        }
        Ok(())
    });
    outcome?;

    if let Some(dir) = checkpoint_dir {
        save_checkpoint(dir, model_config, tc.steps as u64, &weights)?;
    }
    Ok((weights, log))
}
