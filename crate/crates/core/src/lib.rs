//! Layer-wise scaling toolkit.
//!
//! * [`profiles`] turns a [`ScalingSpec`] into per-layer head counts and FFN
//!   widths (uniform, vanilla, framed, reverse and crown schedules).
//! * [`budget`] counts parameters and rescales schedules to a common budget.
//! * [`model`] is a small decoder-only transformer with heterogeneous layers,
//!   exact gradients and AdamW.
//! * [`data`] and [`trainer`] run byte-level training and perplexity
//!   comparisons between variants.

pub mod budget;
pub mod data;
mod error;
pub mod float;
pub mod model;
pub mod presets;
pub mod profiles;
pub mod trainer;

pub use budget::{count_params, emit_spec_table, equalize_budget, ModelConfig, ModelSkeleton, ParamBreakdown};
pub use data::{build_corpus, next_batch, Batch, Corpus};
pub use error::{Error, Result};
pub use profiles::{
    apply_framing, build_layer_profiles, ffn_width, interpolate, interpolate_three_point, quantize_heads, LayerProfile,
    ScalingSpec, ScheduleKind,
};
pub use trainer::{compare_variants, evaluate_perplexity, train, MetricsLog, TrainConfig};
