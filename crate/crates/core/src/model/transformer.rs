//! Forward pass, cross-entropy and hand-derived reverse-mode gradients for a
//! decoder-only transformer whose blocks may all have different widths.
//!
//! Block layout (pre-norm):
//!
//! ```text
//! h = RMSNorm(x)
//! q, k, v = h·Wq, h·Wk, h·Wv
//! q, k = RoPE(RMSNorm_head(q)), RoPE(RMSNorm_head(k))
//! x = x + causal_gqa(q, k, v)·Wo
//! h = RMSNorm(x)
//! x = x + (silu(h·Wgate) ⊙ h·Wup)·Wdown
//! ```
//!
//! Activations are laid out `[batch·seq, width]`, row-major.

use rayon::prelude::*;

use super::ops::{
    gemm, masked_softmax, matmul, matmul_backward, rmsnorm, rmsnorm_backward, silu, silu_grad,
    RopeTable, Strides,
};
use super::weights::Weights;
use crate::budget::ModelConfig;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::float::Scalar;
use crate::profiles::LayerProfile;

/// Activations kept from the forward pass for the backward pass.
pub struct LayerCache<T> {
    x_in: Vec<T>,
    attn_inv: Vec<T>,
    h1: Vec<T>,
    q_raw: Vec<T>,
    k_raw: Vec<T>,
    v: Vec<T>,
    q_inv: Vec<T>,
    k_inv: Vec<T>,
    q_rot: Vec<T>,
    k_rot: Vec<T>,
    /// Attention weights, `[batch, n_heads, seq, seq]`; zero above the
    /// diagonal.
    pub probs: Vec<T>,
    attn_out: Vec<T>,
    x_mid: Vec<T>,
    ffn_inv: Vec<T>,
    h2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
}

pub struct ForwardCache<T> {
    pub layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    final_inv: Vec<T>,
    hf: Vec<T>,
    rope: RopeTable<T>,
}

pub struct Forward<T> {
    /// `[batch, seq, vocab]`
    pub logits: Vec<T>,
    pub batch_size: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub cache: ForwardCache<T>,
}

fn check_batch(config: &ModelConfig, batch: &Batch) -> Result<()> {
    if batch.seq_len == 0 || batch.batch_size == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if batch.seq_len > config.max_seq_len {
        return Err(Error::InvalidInput(format!(
            "sequence length {} exceeds the model's {}",
            batch.seq_len, config.max_seq_len
        )));
    }
    let n = batch.batch_size * batch.seq_len;
    if batch.inputs.len() != n || batch.targets.len() != n {
        return Err(Error::InvalidInput("batch buffers do not match batch_size × seq_len".into()));
    }
    if let Some(bad) = batch
        .inputs
        .iter()
        .chain(&batch.targets)
        .find(|t| **t as usize >= config.vocab_size)
    {
        return Err(Error::InvalidInput(format!(
            "token id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    Ok(())
}

struct AttnShape {
    batch: usize,
    seq: usize,
    heads: usize,
    kv_heads: usize,
    head_dim: usize,
}

impl AttnShape {
    fn new(p: &LayerProfile, batch: usize, seq: usize) -> Self {
        AttnShape { batch, seq, heads: p.n_heads, kv_heads: p.n_kv_heads, head_dim: p.head_dim }
    }

    fn q_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    fn kv_dim(&self) -> usize {
        self.kv_heads * self.head_dim
    }

    fn scale<T: Scalar>(&self) -> T {
        T::of(1.0 / (self.head_dim as f64).sqrt())
    }
}

/// Causal grouped-query attention. Query head `h` reads KV head
/// `h / (heads / kv_heads)`.
fn attention_forward<T: Scalar>(q: &[T], k: &[T], v: &[T], s: &AttnShape) -> (Vec<T>, Vec<T>) {
    let (t, dh, qd, kvd) = (s.seq, s.head_dim, s.q_dim(), s.kv_dim());
    let group = s.heads / s.kv_heads;
    let scale = s.scale::<T>();
    let mut probs = vec![T::zero(); s.batch * s.heads * t * t];
    let mut out = vec![T::zero(); s.batch * t * qd];
    probs
        .par_chunks_mut(s.heads * t * t)
        .zip(out.par_chunks_mut(t * qd))
        .enumerate()
        .for_each(|(b, (pb, ob))| {
            let qb = &q[b * t * qd..(b + 1) * t * qd];
            let kb = &k[b * t * kvd..(b + 1) * t * kvd];
            let vb = &v[b * t * kvd..(b + 1) * t * kvd];
            for h in 0..s.heads {
                let g = h / group;
                let p = &mut pb[h * t * t..(h + 1) * t * t];
                gemm(
                    t,
                    dh,
                    t,
                    scale,
                    &qb[h * dh..],
                    Strides(qd, 1),
                    &kb[g * dh..],
                    Strides(1, kvd),
                    T::zero(),
                    p,
                    Strides(t, 1),
                );
                for (row, pr) in p.chunks_exact_mut(t).enumerate() {
                    masked_softmax(pr, row + 1);
                }
                gemm(
                    t,
                    t,
                    dh,
                    T::one(),
                    p,
                    Strides(t, 1),
                    &vb[g * dh..],
                    Strides(kvd, 1),
                    T::zero(),
                    &mut ob[h * dh..],
                    Strides(qd, 1),
                );
            }
        });
    (probs, out)
}

/// Returns gradients with respect to rotated q, rotated k and v.
fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_out: &[T],
    s: &AttnShape,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (t, dh, qd, kvd) = (s.seq, s.head_dim, s.q_dim(), s.kv_dim());
    let group = s.heads / s.kv_heads;
    let scale = s.scale::<T>();
    let mut dq = vec![T::zero(); s.batch * t * qd];
    let mut dk = vec![T::zero(); s.batch * t * kvd];
    let mut dv = vec![T::zero(); s.batch * t * kvd];
    dq.par_chunks_mut(t * qd)
        .zip(dk.par_chunks_mut(t * kvd))
        .zip(dv.par_chunks_mut(t * kvd))
        .enumerate()
        .for_each(|(b, ((dqb, dkb), dvb))| {
            let qb = &q[b * t * qd..(b + 1) * t * qd];
            let kb = &k[b * t * kvd..(b + 1) * t * kvd];
            let vb = &v[b * t * kvd..(b + 1) * t * kvd];
            let dob = &d_out[b * t * qd..(b + 1) * t * qd];
            let pb = &probs[b * s.heads * t * t..(b + 1) * s.heads * t * t];
            let mut ds = vec![T::zero(); t * t];
            for h in 0..s.heads {
                let g = h / group;
                let p = &pb[h * t * t..(h + 1) * t * t];
                // dP = dO·Vᵀ
                gemm(
                    t,
                    dh,
                    t,
                    T::one(),
                    &dob[h * dh..],
                    Strides(qd, 1),
                    &vb[g * dh..],
                    Strides(1, kvd),
                    T::zero(),
                    &mut ds,
                    Strides(t, 1),
                );
                // dV += Pᵀ·dO
                gemm(
                    t,
                    t,
                    dh,
                    T::one(),
                    p,
                    Strides(1, t),
                    &dob[h * dh..],
                    Strides(qd, 1),
                    T::one(),
                    &mut dvb[g * dh..],
                    Strides(kvd, 1),
                );
                // softmax backward, folded with the 1/√d_h score scale
                for row in 0..t {
                    let pr = &p[row * t..(row + 1) * t];
                    let dr = &mut ds[row * t..(row + 1) * t];
                    let dot = (0..=row).map(|c| pr[c] * dr[c]).sum::<T>();
                    for c in 0..=row {
                        dr[c] = pr[c] * (dr[c] - dot) * scale;
                    }
                    dr[row + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                // dQ = dS·K
                gemm(
                    t,
                    t,
                    dh,
                    T::one(),
                    &ds,
                    Strides(t, 1),
                    &kb[g * dh..],
                    Strides(kvd, 1),
                    T::zero(),
                    &mut dqb[h * dh..],
                    Strides(qd, 1),
                );
                // dK += dSᵀ·Q
                gemm(
                    t,
                    t,
                    dh,
                    T::one(),
                    &ds,
                    Strides(1, t),
                    &qb[h * dh..],
                    Strides(qd, 1),
                    T::one(),
                    &mut dkb[g * dh..],
                    Strides(kvd, 1),
                );
            }
        });
    (dq, dk, dv)
}

fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a = *a + *b);
}

fn check_weights<T: Scalar>(weights: &Weights<T>, config: &ModelConfig) -> Result<()> {
    let layout = super::weights::tensor_layout(config);
    let tensors = weights.tensors();
    if layout.len() != tensors.len() || layout.iter().zip(&tensors).any(|(i, t)| i.numel() != t.len()) {
        return Err(Error::InvalidInput("weights do not match the model configuration".into()));
    }
    Ok(())
}

/// Runs the model over a batch, keeping every activation the backward pass
/// needs.
pub fn forward<T: Scalar>(weights: &Weights<T>, config: &ModelConfig, batch: &Batch) -> Result<Forward<T>> {
    check_batch(config, batch)?;
    check_weights(weights, config)?;
    let (bsz, seq) = (batch.batch_size, batch.seq_len);
    let n = bsz * seq;
    let d = config.d_model;
    let vocab = config.vocab_size;
    let rope = RopeTable::<T>::new(seq, config.head_dim);

    let mut x = Vec::with_capacity(n * d);
    for &tok in &batch.inputs {
        x.extend_from_slice(&weights.embedding[tok as usize * d..][..d]);
    }

    let mut layers = Vec::with_capacity(config.n_layers());
    for (lw, p) in weights.layers.iter().zip(&config.profiles) {
        let shape = AttnShape::new(p, bsz, seq);
        let (qd, kvd, dh, f) = (p.q_dim(), p.kv_dim(), p.head_dim, p.ffn_dim);

        let (h1, attn_inv) = rmsnorm(&x, &lw.attn_norm, d);
        let q_raw = matmul(&h1, &lw.wq, n, d, qd);
        let k_raw = matmul(&h1, &lw.wk, n, d, kvd);
        let v = matmul(&h1, &lw.wv, n, d, kvd);
        let (mut q_rot, q_inv) = rmsnorm(&q_raw, &lw.q_norm, dh);
        let (mut k_rot, k_inv) = rmsnorm(&k_raw, &lw.k_norm, dh);
        rope.apply(&mut q_rot, seq, qd, false);
        rope.apply(&mut k_rot, seq, kvd, false);

        let (probs, attn_out) = attention_forward(&q_rot, &k_rot, &v, &shape);
        let o = matmul(&attn_out, &lw.wo, n, qd, d);
        let mut x_mid = x.clone();
        add_into(&mut x_mid, &o);

        let (h2, ffn_inv) = rmsnorm(&x_mid, &lw.ffn_norm, d);
        let gate = matmul(&h2, &lw.w_gate, n, d, f);
        let up = matmul(&h2, &lw.w_up, n, d, f);
        let act: Vec<T> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * *u).collect();
        let ffn_out = matmul(&act, &lw.w_down, n, f, d);
        let mut x_out = x_mid.clone();
        add_into(&mut x_out, &ffn_out);

        layers.push(LayerCache {
            x_in: std::mem::replace(&mut x, x_out),
            attn_inv,
            h1,
            q_raw,
            k_raw,
            v,
            q_inv,
            k_inv,
            q_rot,
            k_rot,
            probs,
            attn_out,
            x_mid,
            ffn_inv,
            h2,
            gate,
            up,
            act,
        });
    }

    let (hf, final_inv) = rmsnorm(&x, &weights.final_norm, d);
    let logits = if config.tie_embeddings {
        let mut out = vec![T::zero(); n * vocab];
        gemm(
            n,
            d,
            vocab,
            T::one(),
            &hf,
            Strides::row_major(d),
            &weights.embedding,
            Strides::transposed(d),
            T::zero(),
            &mut out,
            Strides::row_major(vocab),
        );
        out
    } else {
        matmul(&hf, &weights.lm_head, n, d, vocab)
    };

    Ok(Forward {
        logits,
        batch_size: bsz,
        seq_len: seq,
        vocab_size: vocab,
        cache: ForwardCache { layers, x_final: x, final_inv, hf, rope },
    })
}

/// Mean next-token cross-entropy and its gradient with respect to the logits.
fn cross_entropy<T: Scalar>(logits: &[T], targets: &[u32], vocab: usize, want_grad: bool) -> (f64, Vec<T>) {
    let n = targets.len();
    let inv_n = 1.0 / n as f64;
    let mut grad = if want_grad { vec![T::zero(); logits.len()] } else { Vec::new() };
    let row_loss = |row: &[T], target: usize, g: Option<&mut [T]>| -> f64 {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + sum.ln();
        if let Some(g) = g {
            for (gi, v) in g.iter_mut().zip(row) {
                *gi = T::of((v.as_f64() - log_z).exp() * inv_n);
            }
            g[target] = g[target] - T::of(inv_n);
        }
        log_z - row[target].as_f64()
    };
    let losses: Vec<f64> = if want_grad {
        logits
            .par_chunks(vocab)
            .zip(grad.par_chunks_mut(vocab))
            .zip(targets.par_iter())
            .map(|((row, g), &tgt)| row_loss(row, tgt as usize, Some(g)))
            .collect()
    } else {
        logits
            .par_chunks(vocab)
            .zip(targets.par_iter())
            .map(|(row, &tgt)| row_loss(row, tgt as usize, None))
            .collect()
    };
    // summed in index order so the result does not depend on thread count
    (losses.iter().sum::<f64>() * inv_n, grad)
}

/// Mean cross-entropy of the batch without gradients.
pub fn loss<T: Scalar>(weights: &Weights<T>, config: &ModelConfig, batch: &Batch) -> Result<f64> {
    let fwd = forward(weights, config, batch)?;
    Ok(cross_entropy(&fwd.logits, &batch.targets, config.vocab_size, false).0)
}

/// Mean cross-entropy and its exact gradient with respect to every weight.
pub fn loss_and_grads<T: Scalar>(
    weights: &Weights<T>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<(f64, Weights<T>)> {
    let fwd = forward(weights, config, batch)?;
    let (loss, dlogits) = cross_entropy(&fwd.logits, &batch.targets, config.vocab_size, true);
    let grads = backward(weights, config, batch, &fwd, &dlogits);
    Ok((loss, grads))
}

fn backward<T: Scalar>(
    weights: &Weights<T>,
    config: &ModelConfig,
    batch: &Batch,
    fwd: &Forward<T>,
    dlogits: &[T],
) -> Weights<T> {
    let (bsz, seq) = (fwd.batch_size, fwd.seq_len);
    let n = bsz * seq;
    let d = config.d_model;
    let vocab = config.vocab_size;
    let cache = &fwd.cache;
    let mut g = Weights::<T>::zeros(config);

    let dhf = if config.tie_embeddings {
        // logits = hf·Eᵀ
        gemm(
            vocab,
            n,
            d,
            T::one(),
            dlogits,
            Strides::transposed(vocab),
            &cache.hf,
            Strides::row_major(d),
            T::one(),
            &mut g.embedding,
            Strides::row_major(d),
        );
        matmul(dlogits, &weights.embedding, n, vocab, d)
    } else {
        matmul_backward(&cache.hf, &weights.lm_head, dlogits, &mut g.lm_head, n, d, vocab)
    };
    let mut dx = rmsnorm_backward(&cache.x_final, &weights.final_norm, &cache.final_inv, &dhf, &mut g.final_norm, d);

    for ((lw, lc), (gl, p)) in weights
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(g.layers.iter_mut().zip(&config.profiles))
        .rev()
    {
        let shape = AttnShape::new(p, bsz, seq);
        let (qd, kvd, dh, f) = (p.q_dim(), p.kv_dim(), p.head_dim, p.ffn_dim);

        // feed-forward branch; dx currently holds d(x_out)
        let dact = matmul_backward(&lc.act, &lw.w_down, &dx, &mut gl.w_down, n, f, d);
        let mut dgate = vec![T::zero(); n * f];
        let mut dup = vec![T::zero(); n * f];
        for i in 0..n * f {
            dgate[i] = dact[i] * lc.up[i] * silu_grad(lc.gate[i]);
            dup[i] = dact[i] * silu(lc.gate[i]);
        }
        let mut dh2 = matmul_backward(&lc.h2, &lw.w_gate, &dgate, &mut gl.w_gate, n, d, f);
        add_into(&mut dh2, &matmul_backward(&lc.h2, &lw.w_up, &dup, &mut gl.w_up, n, d, f));
        let dmid = rmsnorm_backward(&lc.x_mid, &lw.ffn_norm, &lc.ffn_inv, &dh2, &mut gl.ffn_norm, d);
        add_into(&mut dx, &dmid);

        // attention branch; dx now holds d(x_mid)
        let dattn = matmul_backward(&lc.attn_out, &lw.wo, &dx, &mut gl.wo, n, qd, d);
        let (mut dq, mut dk, dv) = attention_backward(&lc.q_rot, &lc.k_rot, &lc.v, &lc.probs, &dattn, &shape);
        cache.rope.apply(&mut dq, seq, qd, true);
        cache.rope.apply(&mut dk, seq, kvd, true);
        let dq_raw = rmsnorm_backward(&lc.q_raw, &lw.q_norm, &lc.q_inv, &dq, &mut gl.q_norm, dh);
        let dk_raw = rmsnorm_backward(&lc.k_raw, &lw.k_norm, &lc.k_inv, &dk, &mut gl.k_norm, dh);
        let mut dh1 = matmul_backward(&lc.h1, &lw.wq, &dq_raw, &mut gl.wq, n, d, qd);
        add_into(&mut dh1, &matmul_backward(&lc.h1, &lw.wk, &dk_raw, &mut gl.wk, n, d, kvd));
        add_into(&mut dh1, &matmul_backward(&lc.h1, &lw.wv, &dv, &mut gl.wv, n, d, kvd));
        let din = rmsnorm_backward(&lc.x_in, &lw.attn_norm, &lc.attn_inv, &dh1, &mut gl.attn_norm, d);
        add_into(&mut dx, &din);
    }

    for (row, &tok) in dx.chunks_exact(d).zip(&batch.inputs) {
        add_into(&mut g.embedding[tok as usize * d..][..d], row);
    }
    g
}
