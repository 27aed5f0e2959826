//! Dense kernels shared by the forward and backward passes.

use crate::float::Scalar;

pub const RMS_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10_000.0;

/// Row/column strides of a matrix view.
#[derive(Clone, Copy, Debug)]
pub struct Strides(pub usize, pub usize);

impl Strides {
    pub fn row_major(cols: usize) -> Self {
        Strides(cols, 1)
    }

    /// View a row-major `rows×cols` matrix as its transpose.
    pub fn transposed(cols: usize) -> Self {
        Strides(1, cols)
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.0 + (cols - 1) * self.1 + 1
        }
    }
}

/// `c = alpha · a·b + beta · c` where `a` is `m×k`, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    assert!(sa.span(m, k) <= a.len(), "gemm: lhs view out of bounds");
    assert!(sb.span(k, n) <= b.len(), "gemm: rhs view out of bounds");
    assert!(sc.span(m, n) <= c.len(), "gemm: output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every view was checked against its slice length above, and `c`
    // is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        )
    }
}

/// `x[rows×inner] · w[inner×cols]`, row-major everywhere.
pub fn matmul<T: Scalar>(x: &[T], w: &[T], rows: usize, inner: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    gemm(
        rows,
        inner,
        cols,
        T::one(),
        x,
        Strides::row_major(inner),
        w,
        Strides::row_major(cols),
        T::zero(),
        &mut out,
        Strides::row_major(cols),
    );
    out
}

/// Backward of `y = x·w`: accumulates `x^T·dy` into `dw` and returns `dy·w^T`.
pub fn matmul_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    rows: usize,
    inner: usize,
    cols: usize,
) -> Vec<T> {
    gemm(
        inner,
        rows,
        cols,
        T::one(),
        x,
        Strides::transposed(inner),
        dy,
        Strides::row_major(cols),
        T::one(),
        dw,
        Strides::row_major(cols),
    );
    let mut dx = vec![T::zero(); rows * inner];
    gemm(
        rows,
        cols,
        inner,
        T::one(),
        dy,
        Strides::row_major(cols),
        w,
        Strides::transposed(cols),
        T::zero(),
        &mut dx,
        Strides::row_major(inner),
    );
    dx
}

/// RMS-normalizes every consecutive `dim`-long chunk of `x` and scales it by
/// the matching `dim`-long slice of `weight`.
///
/// `weight` may hold several slices back to back (one per head); chunk `j`
/// uses slice `j mod (weight.len() / dim)`. Returns the scaled output and the
/// per-chunk reciprocal RMS.
pub fn rmsnorm<T: Scalar>(x: &[T], weight: &[T], dim: usize) -> (Vec<T>, Vec<T>) {
    let slices = weight.len() / dim;
    let eps = T::of(RMS_EPS);
    let mut out = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(x.len() / dim);
    for (j, (xc, oc)) in x.chunks_exact(dim).zip(out.chunks_exact_mut(dim)).enumerate() {
        let w = &weight[(j % slices) * dim..][..dim];
        let ms = xc.iter().map(|v| *v * *v).sum::<T>() / T::of(dim as f64);
        let r = T::one() / (ms + eps).sqrt();
        for ((o, v), g) in oc.iter_mut().zip(xc).zip(w) {
            *o = *v * r * *g;
        }
        inv.push(r);
    }
    (out, inv)
}

/// Backward of [`rmsnorm`]. Accumulates into `dweight`, returns `dx`.
pub fn rmsnorm_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    inv: &[T],
    dy: &[T],
    dweight: &mut [T],
    dim: usize,
) -> Vec<T> {
    let slices = weight.len() / dim;
    let n = T::of(dim as f64);
    let mut dx = vec![T::zero(); x.len()];
    for (j, ((xc, dyc), dxc)) in x
        .chunks_exact(dim)
        .zip(dy.chunks_exact(dim))
        .zip(dx.chunks_exact_mut(dim))
        .enumerate()
    {
        let off = (j % slices) * dim;
        let w = &weight[off..off + dim];
        let dw = &mut dweight[off..off + dim];
        let r = inv[j];
        // normalized input u = x·r; gradient wrt u is dy·w
        let mut dot = T::zero();
        for i in 0..dim {
            let u = xc[i] * r;
            let du = dyc[i] * w[i];
            dw[i] = dw[i] + dyc[i] * u;
            dot = dot + du * u;
        }
        let mean = dot / n;
        for i in 0..dim {
            let u = xc[i] * r;
            dxc[i] = r * (dyc[i] * w[i] - u * mean);
        }
    }
    dx
}

/// Cosine/sine tables for rotary embeddings, `seq_len × head_dim/2` each.
pub struct RopeTable<T> {
    pub half: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Scalar> RopeTable<T> {
    pub fn new(seq_len: usize, head_dim: usize) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(seq_len * half);
        let mut sin = Vec::with_capacity(seq_len * half);
        for t in 0..seq_len {
            for i in 0..half {
                let freq = ROPE_BASE.powf(-(2.0 * i as f64) / head_dim as f64);
                let angle = t as f64 * freq;
                cos.push(T::of(angle.cos()));
                sin.push(T::of(angle.sin()));
            }
        }
        RopeTable { half, cos, sin }
    }

    /// Rotates adjacent pairs of one head vector at position `pos`. With
    /// `inverse` the rotation runs backwards, which is also its gradient.
    pub fn rotate(&self, v: &mut [T], pos: usize, inverse: bool) {
        let cos = &self.cos[pos * self.half..][..self.half];
        let sin = &self.sin[pos * self.half..][..self.half];
        for (i, pair) in v.chunks_exact_mut(2).enumerate() {
            let (c, s) = (cos[i], if inverse { -sin[i] } else { sin[i] });
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * c - b * s;
            pair[1] = a * s + b * c;
        }
    }

    /// Rotates every head of a `[batch·seq, heads·head_dim]` activation.
    pub fn apply(&self, x: &mut [T], seq_len: usize, width: usize, inverse: bool) {
        let head_dim = self.half * 2;
        for (row, xr) in x.chunks_exact_mut(width).enumerate() {
            let pos = row % seq_len;
            for head in xr.chunks_exact_mut(head_dim) {
                self.rotate(head, pos, inverse);
            }
        }
    }
}

pub fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

/// In-place softmax of `row[..len]` with an `f64` accumulator; entries at
/// `len..` are zeroed (causal mask).
pub fn masked_softmax<T: Scalar>(row: &mut [T], len: usize) {
    let max = row[..len].iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let mut sum = 0.0f64;
    for v in row[..len].iter_mut() {
        let e = (*v - max).exp();
        sum += e.as_f64();
        *v = e;
    }
    let inv = T::of(1.0 / sum);
    for v in row[..len].iter_mut() {
        *v = *v * inv;
    }
    row[len..].iter_mut().for_each(|v| *v = T::zero());
}
