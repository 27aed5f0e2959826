use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::budget::ModelConfig;
use crate::float::Scalar;

pub const INIT_STD: f64 = 0.02;
const TRUNCATION: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    /// `d_model × q_dim`
    pub wq: Vec<T>,
    /// `d_model × kv_dim`
    pub wk: Vec<T>,
    /// `d_model × kv_dim`
    pub wv: Vec<T>,
    /// `q_dim × d_model`
    pub wo: Vec<T>,
    pub q_norm: Vec<T>,
    pub k_norm: Vec<T>,
    pub attn_norm: Vec<T>,
    pub ffn_norm: Vec<T>,
    /// `d_model × ffn_dim`
    pub w_gate: Vec<T>,
    /// `d_model × ffn_dim`
    pub w_up: Vec<T>,
    /// `ffn_dim × d_model`
    pub w_down: Vec<T>,
}

/// All trainable tensors of a model. With tied embeddings `lm_head` is empty
/// and the output projection reuses `embedding`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    /// `vocab × d_model`
    pub embedding: Vec<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Vec<T>,
    /// `d_model × vocab`
    pub lm_head: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Embedding,
    Matrix,
    Norm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
}

impl TensorInfo {
    fn new(name: impl Into<String>, shape: &[usize], role: TensorRole) -> Self {
        TensorInfo { name: name.into(), shape: shape.to_vec(), role }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Only projection matrices are decayed.
    pub fn decays(&self) -> bool {
        self.role == TensorRole::Matrix
    }
}

/// Names, shapes and roles of every tensor in canonical order. The order
/// matches [`Weights::tensors`] and the checkpoint layout.
pub fn tensor_layout(config: &ModelConfig) -> Vec<TensorInfo> {
    use TensorRole::*;
    let d = config.d_model;
    let mut out = vec![TensorInfo::new("embedding", &[config.vocab_size, d], Embedding)];
    for (i, p) in config.profiles.iter().enumerate() {
        let (q, kv, f) = (p.q_dim(), p.kv_dim(), p.ffn_dim);
        let name = |s: &str| format!("layers.{i}.{s}");
        out.extend([
            TensorInfo::new(name("wq"), &[d, q], Matrix),
            TensorInfo::new(name("wk"), &[d, kv], Matrix),
            TensorInfo::new(name("wv"), &[d, kv], Matrix),
            TensorInfo::new(name("wo"), &[q, d], Matrix),
            TensorInfo::new(name("q_norm"), &[q], Norm),
            TensorInfo::new(name("k_norm"), &[kv], Norm),
            TensorInfo::new(name("attn_norm"), &[d], Norm),
            TensorInfo::new(name("ffn_norm"), &[d], Norm),
            TensorInfo::new(name("w_gate"), &[d, f], Matrix),
            TensorInfo::new(name("w_up"), &[d, f], Matrix),
            TensorInfo::new(name("w_down"), &[f, d], Matrix),
        ]);
    }
    out.push(TensorInfo::new("final_norm", &[d], Norm));
    if !config.tie_embeddings {
        out.push(TensorInfo::new("lm_head", &[d, config.vocab_size], Matrix));
    }
    out
}

impl<T: Scalar> Weights<T> {
    /// Every entry zero, shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut tensors = tensor_layout(config)
            .into_iter()
            .map(|info| vec![T::zero(); info.numel()]);
        Self::assemble(config, &mut tensors)
    }

    fn assemble(config: &ModelConfig, src: &mut impl Iterator<Item = Vec<T>>) -> Self {
        let mut next = || src.next().expect("layout and tensor list agree");
        let embedding = next();
        let layers = (0..config.n_layers())
            .map(|_| LayerWeights {
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                q_norm: next(),
                k_norm: next(),
                attn_norm: next(),
                ffn_norm: next(),
                w_gate: next(),
                w_up: next(),
                w_down: next(),
            })
            .collect();
        let final_norm = next();
        let lm_head = if config.tie_embeddings { Vec::new() } else { next() };
        Weights { embedding, layers, final_norm, lm_head }
    }

    /// Builds weights from tensors listed in layout order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Vec<T>>) -> Self {
        Self::assemble(config, &mut tensors.into_iter())
    }

    /// Tensors in layout order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.embedding];
        for l in &self.layers {
            out.extend([
                &l.wq[..],
                &l.wk,
                &l.wv,
                &l.wo,
                &l.q_norm,
                &l.k_norm,
                &l.attn_norm,
                &l.ffn_norm,
                &l.w_gate,
                &l.w_up,
                &l.w_down,
            ]);
        }
        out.push(&self.final_norm);
        if !self.lm_head.is_empty() {
            out.push(&self.lm_head);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.wq[..],
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.q_norm,
                &mut l.k_norm,
                &mut l.attn_norm,
                &mut l.ffn_norm,
                &mut l.w_gate,
                &mut l.w_up,
                &mut l.w_down,
            ]);
        }
        out.push(&mut self.final_norm);
        if !self.lm_head.is_empty() {
            out.push(&mut self.lm_head);
        }
        out
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Root of the sum of squares over every tensor, accumulated in `f64`.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        Weights {
            embedding: conv(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    wq: conv(&l.wq),
                    wk: conv(&l.wk),
                    wv: conv(&l.wv),
                    wo: conv(&l.wo),
                    q_norm: conv(&l.q_norm),
                    k_norm: conv(&l.k_norm),
                    attn_norm: conv(&l.attn_norm),
                    ffn_norm: conv(&l.ffn_norm),
                    w_gate: conv(&l.w_gate),
                    w_up: conv(&l.w_up),
                    w_down: conv(&l.w_down),
                })
                .collect(),
            final_norm: conv(&self.final_norm),
            lm_head: conv(&self.lm_head),
        }
    }
}

/// Seeded initialization: matrices and the embedding from a normal with
/// std 0.02 truncated at ±3σ, norm gains at one.
pub fn init_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Weights<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let limit = TRUNCATION * INIT_STD;
    let mut tensors = tensor_layout(config).into_iter().map(|info| match info.role {
        TensorRole::Norm => vec![T::one(); info.numel()],
        TensorRole::Matrix | TensorRole::Embedding => (0..info.numel())
            .map(|_| loop {
                let v: f64 = normal.sample(&mut rng);
                if v.abs() <= limit {
                    break T::of(v);
                }
            })
            .collect(),
    });
    Weights::assemble(config, &mut tensors)
}
