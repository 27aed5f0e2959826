//! Per-layer width schedules.
//!
//! A [`ScalingSpec`] names a schedule shape (uniform, vanilla, framed, reverse
//! or crown) together with its FFN scalars `β` and attention scalars `α`.
//! [`build_layer_profiles`] interpolates the scalars across depth, applies the
//! framing override when requested and resolves every layer into integer
//! widths: `d_ffn = β·d_model` and `n_heads = α·d_model/d_h`, the latter
//! snapped to a multiple of the KV-head count so grouped-query attention stays
//! well formed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Uniform,
    Vanilla,
    Framed,
    Reverse,
    Crown,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 5] = [
        ScheduleKind::Uniform,
        ScheduleKind::Vanilla,
        ScheduleKind::Framed,
        ScheduleKind::Reverse,
        ScheduleKind::Crown,
    ];

    /// Number of interpolation anchors the kind expects.
    pub fn anchor_count(self) -> usize {
        match self {
            ScheduleKind::Crown => 3,
            _ => 2,
        }
    }

    /// Framing used when a spec does not say otherwise.
    pub fn default_framing(self) -> bool {
        matches!(
            self,
            ScheduleKind::Framed | ScheduleKind::Reverse | ScheduleKind::Crown
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Uniform => "uniform",
            ScheduleKind::Vanilla => "vanilla",
            ScheduleKind::Framed => "framed",
            ScheduleKind::Reverse => "reverse",
            ScheduleKind::Crown => "crown",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown schedule kind {s:?}")))
    }
}

/// A named layer-wise scaling variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct ScalingSpec {
    pub kind: ScheduleKind,
    pub ffn_scalars: Vec<f64>,
    pub qkv_scalars: Vec<f64>,
    pub framing: bool,
    pub n_layers: usize,
}

#[derive(Deserialize)]
struct RawSpec {
    kind: ScheduleKind,
    ffn_scalars: Vec<f64>,
    qkv_scalars: Vec<f64>,
    framing: Option<bool>,
    n_layers: usize,
}

impl TryFrom<RawSpec> for ScalingSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let spec = ScalingSpec {
            kind: raw.kind,
            framing: raw.framing.unwrap_or(raw.kind.default_framing()),
            ffn_scalars: raw.ffn_scalars,
            qkv_scalars: raw.qkv_scalars,
            n_layers: raw.n_layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ScalingSpec {
    /// Builds a validated spec with the kind's default framing. A single
    /// scalar is accepted for two-anchor kinds and repeated at both ends.
    pub fn new(
        kind: ScheduleKind,
        ffn_scalars: &[f64],
        qkv_scalars: &[f64],
        n_layers: usize,
    ) -> Result<Self> {
        let expand = |v: &[f64]| -> Vec<f64> {
            if v.len() == 1 && kind.anchor_count() == 2 {
                vec![v[0], v[0]]
            } else {
                v.to_vec()
            }
        };
        let spec = ScalingSpec {
            kind,
            ffn_scalars: expand(ffn_scalars),
            qkv_scalars: expand(qkv_scalars),
            framing: kind.default_framing(),
            n_layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_framing(mut self, framing: bool) -> Self {
        self.framing = framing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.kind.anchor_count();
        for (name, scalars) in [("ffn", &self.ffn_scalars), ("qkv", &self.qkv_scalars)] {
            if scalars.len() != want {
                return Err(Error::invalid(format!(
                    "{} schedule takes {want} {name} scalars, got {}",
                    self.kind,
                    scalars.len()
                )));
            }
            if let Some(bad) = scalars.iter().find(|s| !s.is_finite() || **s <= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} scalars must be positive and finite, got {bad}"
                )));
            }
            let (first, last) = (scalars[0], scalars[want - 1]);
            match self.kind {
                ScheduleKind::Reverse if first < last => {
                    return Err(Error::invalid(format!(
                        "reverse schedule needs non-increasing {name} scalars, got [{first}, {last}]"
                    )))
                }
                ScheduleKind::Uniform if first != last => {
                    return Err(Error::invalid(format!(
                        "uniform schedule needs equal {name} scalars, got [{first}, {last}]"
                    )))
                }
                _ => {}
            }
        }
        if self.n_layers < 2 {
            return Err(Error::invalid(format!(
                "at least 2 layers required, got {}",
                self.n_layers
            )));
        }
        if self.kind == ScheduleKind::Crown && self.n_layers < 3 {
            return Err(Error::invalid("crown schedules need at least 3 layers"));
        }
        Ok(())
    }

    /// Multiplies every FFN scalar by `factor`.
    pub fn scale_ffn(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.ffn_scalars.iter_mut().for_each(|b| *b *= factor);
        out
    }

    /// Per-layer `β` after interpolation and framing.
    pub fn ffn_schedule(&self) -> Result<Vec<f64>> {
        self.schedule(&self.ffn_scalars)
    }

    /// Per-layer `α` after interpolation and framing.
    pub fn qkv_schedule(&self) -> Result<Vec<f64>> {
        self.schedule(&self.qkv_scalars)
    }

    fn schedule(&self, scalars: &[f64]) -> Result<Vec<f64>> {
        let values = match *scalars {
            [start, end] => interpolate(start, end, self.n_layers)?,
            [start, middle, end] => interpolate_three_point(start, middle, end, self.n_layers)?,
            _ => return Err(Error::invalid("schedule needs 2 or 3 scalars")),
        };
        if self.framing {
            apply_framing(&values, scalars)
        } else {
            Ok(values)
        }
    }
}

/// Resolved widths of one transformer block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer_index: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub beta_effective: f64,
    pub alpha_effective: f64,
}

impl LayerProfile {
    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// Query heads served by each KV head.
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_kv_heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::invalid(format!(
                "layer {}: widths must be positive",
                self.layer_index
            )));
        }
        if self.n_heads < self.n_kv_heads || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::invalid(format!(
                "layer {}: {} query heads not a multiple of {} KV heads",
                self.layer_index, self.n_heads, self.n_kv_heads
            )));
        }
        Ok(())
    }
}

/// `count` evenly spaced values from `start` to `end`, both included.
pub fn interpolate(start: f64, end: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::invalid(format!(
            "interpolation needs at least 2 points, got {count}"
        )));
    }
    let span = (count - 1) as f64;
    Ok((0..count)
        .map(|i| start + (end - start) * i as f64 / span)
        .collect())
}

/// Two linear segments meeting at `middle`, which sits at index
/// `floor((count - 1) / 2)`.
pub fn interpolate_three_point(start: f64, middle: f64, end: f64, count: usize) -> Result<Vec<f64>> {
    if count < 3 {
        return Err(Error::invalid(format!(
            "three-point interpolation needs at least 3 points, got {count}"
        )));
    }
    let peak = (count - 1) / 2;
    let mut values = interpolate(start, middle, peak + 1)?;
    values.extend(interpolate(middle, end, count - peak)?.into_iter().skip(1));
    Ok(values)
}

/// Overrides the first and last entries with the largest anchor scalar.
///
/// For two anchors this is `max(start, end)`. For a crown schedule the
/// maximum runs over all three anchors, so the outer blocks match the widest
/// block.
pub fn apply_framing(values: &[f64], anchors: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot frame an empty schedule"));
    }
    let frame = anchors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !frame.is_finite() {
        return Err(Error::invalid("framing needs at least one finite anchor"));
    }
    let mut out = values.to_vec();
    let last = out.len() - 1;
    out[0] = frame;
    out[last] = frame;
    Ok(out)
}

/// Query-head count for scalar `alpha`, snapped to a multiple of
/// `n_kv_heads`.
///
/// Rounds `alpha·d_model/head_dim` to the nearest multiple (ties up, never
/// below `n_kv_heads`). If that lands more than 10% under the raw value the
/// next multiple is taken instead.
pub fn quantize_heads(alpha: f64, d_model: usize, head_dim: usize, n_kv_heads: usize) -> Result<usize> {
    if head_dim == 0 || !d_model.is_multiple_of(head_dim) {
        return Err(Error::invalid(format!(
            "d_model {d_model} is not divisible by head_dim {head_dim}"
        )));
    }
    if n_kv_heads == 0 {
        return Err(Error::invalid("n_kv_heads must be at least 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let raw = alpha * (d_model / head_dim) as f64;
    let g = n_kv_heads as f64;
    // The epsilon keeps exact ties (raw = k·g + g/2) from slipping below the
    // midpoint through interpolation round-off.
    let mut heads = (((raw + g / 2.0) / g + 1e-9).floor() * g).max(g);
    if heads < 0.9 * raw {
        heads += g;
    }
    Ok(heads as usize)
}

/// FFN hidden width for scalar `beta`: `round(beta·d_model)` snapped to the
/// nearest multiple of `alignment`, at least `alignment`.
pub fn ffn_width(beta: f64, d_model: usize, alignment: usize) -> Result<usize> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if alignment == 0 {
        return Err(Error::invalid("alignment must be at least 1"));
    }
    let raw = (beta * d_model as f64).round();
    let a = alignment as f64;
    Ok(((raw / a).round() * a).max(a) as usize)
}

/// Resolves a spec into concrete per-layer widths.
pub fn build_layer_profiles(
    spec: &ScalingSpec,
    d_model: usize,
    head_dim: usize,
    n_kv_heads: usize,
    alignment: usize,
) -> Result<Vec<LayerProfile>> {
    spec.validate()?;
    let betas = spec.ffn_schedule()?;
    let alphas = spec.qkv_schedule()?;
    betas
        .into_iter()
        .zip(alphas)
        .enumerate()
        .map(|(layer_index, (beta, alpha))| {
            let profile = LayerProfile {
                layer_index,
                n_heads: quantize_heads(alpha, d_model, head_dim, n_kv_heads)?,
                n_kv_heads,
                head_dim,
                ffn_dim: ffn_width(beta, d_model, alignment)?,
                beta_effective: beta,
                alpha_effective: alpha,
            };
            profile.validate()?;
            Ok(profile)
        })
        .collect()
}
