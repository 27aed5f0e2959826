//! Fixtures shared by the benchmarks.

use lws_core::data::{sampler_rng, synthetic_corpus};
use lws_core::presets::desk_comparison;
use lws_core::{build_corpus, next_batch, Batch, ModelConfig};

/// The desk-scale crown variant and one batch of `batch_size` windows.
pub fn desk_crown(batch_size: usize) -> (ModelConfig, Batch) {
    let preset = desk_comparison();
    let spec = &preset.variant("crown").expect("crown variant").spec;
    let config = preset.skeleton.resolve(spec).expect("valid preset");
    let corpus = build_corpus(&synthetic_corpus(64 * 1024, 5), 0.1, 5, 256).expect("corpus");
    let batch = next_batch(&corpus, batch_size, 256, &mut sampler_rng(5)).expect("batch");
    (config, batch)
}
