//! Parameter accounting and budget equalization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{build_layer_profiles, LayerProfile, ScalingSpec};

/// Everything about an architecture except its per-layer widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSkeleton {
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub head_dim: usize,
    pub n_kv_heads: usize,
    #[serde(default)]
    pub tie_embeddings: bool,
    #[serde(default = "default_alignment")]
    pub ffn_alignment: usize,
}

fn default_alignment() -> usize {
    1
}

impl ModelSkeleton {
    /// 768 wide, 64-dim heads, 4 KV heads, 50,279-entry vocabulary, untied head.
    pub fn reference() -> Self {
        ModelSkeleton {
            d_model: 768,
            vocab_size: 50_279,
            max_seq_len: 1024,
            head_dim: 64,
            n_kv_heads: 4,
            tie_embeddings: false,
            ffn_alignment: 1,
        }
    }

    pub fn resolve(&self, spec: &ScalingSpec) -> Result<ModelConfig> {
        let profiles = build_layer_profiles(
            spec,
            self.d_model,
            self.head_dim,
            self.n_kv_heads,
            self.ffn_alignment,
        )?;
        let config = ModelConfig {
            d_model: self.d_model,
            vocab_size: self.vocab_size,
            max_seq_len: self.max_seq_len,
            head_dim: self.head_dim,
            n_kv_heads: self.n_kv_heads,
            profiles,
            tie_embeddings: self.tie_embeddings,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Full architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub head_dim: usize,
    pub n_kv_heads: usize,
    pub profiles: Vec<LayerProfile>,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn n_layers(&self) -> usize {
        self.profiles.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::invalid("d_model, vocab_size and max_seq_len must be positive"));
        }
        if self.head_dim == 0 || !self.d_model.is_multiple_of(self.head_dim) {
            return Err(Error::invalid(format!(
                "d_model {} is not a multiple of head_dim {}",
                self.d_model, self.head_dim
            )));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::invalid("head_dim must be even for rotary embeddings"));
        }
        if self.profiles.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        for p in &self.profiles {
            p.validate()?;
            if p.head_dim != self.head_dim || p.n_kv_heads != self.n_kv_heads {
                return Err(Error::invalid(format!(
                    "layer {} disagrees with the model on head_dim or n_kv_heads",
                    p.layer_index
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub embedding: u64,
    pub lm_head: u64,
    pub per_layer_attention: Vec<u64>,
    pub per_layer_ffn: Vec<u64>,
    pub norms: u64,
    pub total: u64,
    pub non_embedding: u64,
}

impl ParamBreakdown {
    pub fn total_m(&self) -> f64 {
        self.total as f64 / 1e6
    }

    pub fn non_embedding_m(&self) -> f64 {
        self.non_embedding as f64 / 1e6
    }
}

/// Counts every weight of a bias-free SwiGLU / GQA / QK-norm transformer.
///
/// The untied output head is part of `non_embedding`; `embedding` is the
/// input table alone. Rotary embeddings have no parameters.
pub fn count_params(config: &ModelConfig) -> ParamBreakdown {
    let d = config.d_model as u64;
    let vocab = config.vocab_size as u64;
    let embedding = vocab * d;
    let lm_head = if config.tie_embeddings { 0 } else { vocab * d };

    let mut per_layer_attention = Vec::with_capacity(config.n_layers());
    let mut per_layer_ffn = Vec::with_capacity(config.n_layers());
    for p in &config.profiles {
        let q = p.q_dim() as u64;
        let kv = p.kv_dim() as u64;
        // Wq, Wk, Wv, Wo plus the two QK-norm gains
        per_layer_attention.push(d * q + 2 * d * kv + q * d + q + kv);
        per_layer_ffn.push(3 * d * p.ffn_dim as u64);
    }
    let norms = 2 * d * config.n_layers() as u64 + d;
    let non_embedding = lm_head
        + norms
        + per_layer_attention.iter().sum::<u64>()
        + per_layer_ffn.iter().sum::<u64>();
    ParamBreakdown {
        embedding,
        lm_head,
        per_layer_attention,
        per_layer_ffn,
        norms,
        total: embedding + non_embedding,
        non_embedding,
    }
}

const SCALE_LO: f64 = 0.05;
const SCALE_HI: f64 = 20.0;
const MAX_BISECTIONS: usize = 64;

/// Rescales the FFN scalars by a common factor until the resolved model lands
/// within `tolerance · target_params` of `target_params`.
///
/// Attention scalars are left alone since head counts move in steps of a
/// whole KV group. A spec already inside the band comes back unchanged.
pub fn equalize_budget(
    spec: &ScalingSpec,
    skeleton: &ModelSkeleton,
    target_params: u64,
    tolerance: f64,
) -> Result<ScalingSpec> {
    if !(tolerance > 0.0 && tolerance <= 0.1) {
        return Err(Error::invalid(format!(
            "tolerance must lie in (0, 0.1], got {tolerance}"
        )));
    }
    let count = |s: &ScalingSpec| -> Result<u64> { Ok(count_params(&skeleton.resolve(s)?).total) };
    let target = target_params as f64;
    let band = tolerance * target;
    let miss = |c: u64| (c as f64 - target).abs();

    let current = count(spec)?;
    if miss(current) <= band {
        return Ok(spec.clone());
    }

    let lo_count = count(&spec.scale_ffn(SCALE_LO))?;
    let hi_count = count(&spec.scale_ffn(SCALE_HI))?;
    let vocab_floor = {
        let v = (skeleton.vocab_size * skeleton.d_model) as u64;
        if skeleton.tie_embeddings { v } else { 2 * v }
    };
    if target_params <= vocab_floor || lo_count as f64 > target + band {
        return Err(Error::InfeasibleBudget { target: target_params, best: lo_count });
    }
    if (hi_count as f64) < target - band {
        return Err(Error::InfeasibleBudget { target: target_params, best: hi_count });
    }

    let (mut lo, mut hi) = (SCALE_LO, SCALE_HI);
    let mut best = if miss(lo_count) < miss(hi_count) { lo_count } else { hi_count };
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let candidate = spec.scale_ffn(mid);
        let c = count(&candidate)?;
        if miss(c) < miss(best) {
            best = c;
        }
        if miss(c) <= band {
            return Ok(candidate);
        }
        if (c as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::InfeasibleBudget { target: target_params, best })
}

/// One row of the architecture summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpecRow {
    pub name: String,
    pub n_layers: usize,
    pub fnn_scalars: String,
    pub qkv_scalars: String,
    pub framing: bool,
    pub params_m: String,
    pub non_embed_m: String,
}

fn format_scalars(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn emit_spec_table(specs: &[(String, ScalingSpec)], skeleton: &ModelSkeleton) -> Result<Vec<SpecRow>> {
    specs
        .iter()
        .map(|(name, spec)| {
            let counts = count_params(&skeleton.resolve(spec)?);
            Ok(SpecRow {
                name: name.clone(),
                n_layers: spec.n_layers,
                fnn_scalars: format_scalars(&spec.ffn_scalars),
                qkv_scalars: format_scalars(&spec.qkv_scalars),
                framing: spec.framing,
                params_m: format!("{:.2}", counts.total_m()),
                non_embed_m: format!("{:.2}", counts.non_embedding_m()),
            })
        })
        .collect()
}

const TABLE_HEADER: [&str; 7] = [
    "name",
    "n_layers",
    "fnn_scalars",
    "qkv_scalars",
    "framing",
    "params_m",
    "non_embed_m",
];

pub fn write_spec_table<W: Write>(rows: &[SpecRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::ScheduleKind;
    use proptest::prelude::*;

    fn baseline_12l() -> ScalingSpec {
        ScalingSpec::new(ScheduleKind::Uniform, &[4.0], &[1.0], 12).unwrap()
    }

    fn within(actual: f64, expected: f64, rel: f64) -> bool {
        ((actual - expected) / expected).abs() <= rel
    }

    #[test]
    fn baseline_12l_matches_reference_counts() {
        let b = count_params(&ModelSkeleton::reference().resolve(&baseline_12l()).unwrap());
        assert!(within(b.total_m(), 181.1, 0.02), "{}", b.total_m());
        assert!(within(b.non_embedding_m(), 142.5, 0.02), "{}", b.non_embedding_m());
        // hand count: 12 × (1,572,864 + 1,024 + 7,077,888 + 1,536) + 768 + 2 × 50,279 × 768
        assert_eq!(b.total, 12 * 8_653_312 + 768 + 2 * 50_279 * 768);
    }

    #[test]
    fn vanilla_18l_matches_reference_counts() {
        let spec = ScalingSpec::new(ScheduleKind::Vanilla, &[1.0, 4.0], &[0.5, 1.0], 18).unwrap();
        let b = count_params(&ModelSkeleton::reference().resolve(&spec).unwrap());
        assert!(within(b.total_m(), 179.7, 0.02), "{}", b.total_m());
    }

    #[test]
    fn tying_removes_exactly_one_table() {
        let mut sk = ModelSkeleton::reference();
        let untied = count_params(&sk.resolve(&baseline_12l()).unwrap());
        sk.tie_embeddings = true;
        let tied = count_params(&sk.resolve(&baseline_12l()).unwrap());
        assert_eq!(untied.total - tied.total, 50_279 * 768);
        assert_eq!(tied.lm_head, 0);
    }

    #[test]
    fn equalize_noop_when_within_tolerance() {
        let sk = ModelSkeleton::reference();
        let spec = baseline_12l();
        let out = equalize_budget(&spec, &sk, 181_100_000, 0.01).unwrap();
        assert_eq!(out, spec);
    }

    #[test]
    fn equalize_scales_vanilla_up_to_baseline_18l() {
        let sk = ModelSkeleton::reference();
        let spec = ScalingSpec::new(ScheduleKind::Vanilla, &[1.0, 4.0], &[0.5, 1.0], 18).unwrap();
        let target = 183_500_000;
        let out = equalize_budget(&spec, &sk, target, 0.005).unwrap();
        let total = count_params(&sk.resolve(&out).unwrap()).total as f64;
        assert!(((total - target as f64) / target as f64).abs() <= 0.005);
        assert!(out.ffn_scalars[0] > 1.0 && out.ffn_scalars[1] > 4.0);
        assert_eq!(out.qkv_scalars, spec.qkv_scalars);
        // ratio between anchors is preserved
        assert!((out.ffn_scalars[1] / out.ffn_scalars[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn equalize_rejects_floor_violation() {
        let sk = ModelSkeleton::reference();
        let err = equalize_budget(&baseline_12l(), &sk, 50_000_000, 0.01).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBudget { target: 50_000_000, .. }));
        assert!(equalize_budget(&baseline_12l(), &sk, 181_000_000, 0.0).is_err());
        assert!(equalize_budget(&baseline_12l(), &sk, 181_000_000, 0.2).is_err());
    }

    #[test]
    fn equalize_reports_best_when_out_of_range() {
        let sk = ModelSkeleton::reference();
        match equalize_budget(&baseline_12l(), &sk, 10_000_000_000, 0.01) {
            Err(Error::InfeasibleBudget { best, .. }) => assert!(best > 181_000_000),
            other => panic!("expected infeasible budget, got {other:?}"),
        }
    }

    #[test]
    fn table_csv_shape() {
        let sk = ModelSkeleton::reference();
        let mut buf = Vec::new();
        write_spec_table(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "name,n_layers,fnn_scalars,qkv_scalars,framing,params_m,non_embed_m\n"
        );

        let specs = vec![
            ("a".to_string(), baseline_12l()),
            ("a".to_string(), baseline_12l()),
        ];
        let rows = emit_spec_table(&specs, &sk).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[0].params_m, "181.07");
        let mut buf = Vec::new();
        write_spec_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("a,12,\"[4.0, 4.0]\",\"[1.0, 1.0]\",false,181.07,142.45"), "{text}");
    }

    fn arb_spec() -> impl Strategy<Value = ScalingSpec> {
        (
            prop::sample::select(ScheduleKind::ALL.to_vec()),
            prop::collection::vec(0.25f64..6.0, 3),
            prop::collection::vec(0.25f64..2.0, 3),
            3usize..24,
        )
            .prop_map(|(kind, mut f, mut q, n)| {
                match kind {
                    ScheduleKind::Crown => {}
                    ScheduleKind::Uniform => {
                        f = vec![f[0]; 2];
                        q = vec![q[0]; 2];
                    }
                    ScheduleKind::Reverse => {
                        f = vec![f[0].max(f[1]), f[0].min(f[1])];
                        q = vec![q[0].max(q[1]), q[0].min(q[1])];
                    }
                    _ => {
                        f.truncate(2);
                        q.truncate(2);
                    }
                }
                ScalingSpec::new(kind, &f, &q, n).unwrap()
            })
    }

    fn small_skeleton() -> ModelSkeleton {
        ModelSkeleton {
            d_model: 256,
            vocab_size: 1000,
            max_seq_len: 128,
            head_dim: 32,
            n_kv_heads: 2,
            tie_embeddings: false,
            ffn_alignment: 1,
        }
    }

    proptest! {
        #[test]
        fn breakdown_is_consistent(spec in arb_spec(), tied in any::<bool>()) {
            let mut sk = small_skeleton();
            sk.tie_embeddings = tied;
            let b = count_params(&sk.resolve(&spec).unwrap());
            prop_assert_eq!(b.total, b.embedding + b.non_embedding);
            prop_assert_eq!(
                b.non_embedding,
                b.lm_head + b.norms + b.per_layer_attention.iter().sum::<u64>() + b.per_layer_ffn.iter().sum::<u64>()
            );
        }

        #[test]
        fn count_is_monotone_in_ffn_width(spec in arb_spec(), layer in 0usize..3) {
            let mut config = small_skeleton().resolve(&spec).unwrap();
            let before = count_params(&config).total;
            let i = layer % config.profiles.len();
            config.profiles[i].ffn_dim += 1;
            prop_assert!(count_params(&config).total > before);
        }

        #[test]
        fn vanilla_and_unframed_reverse_cost_the_same(a in 0.25f64..6.0, b in 0.25f64..6.0, qa in 0.25f64..2.0, qb in 0.25f64..2.0, n in 2usize..24) {
            let (hi, lo) = (a.max(b), a.min(b));
            let (qhi, qlo) = (qa.max(qb), qa.min(qb));
            let vanilla = ScalingSpec::new(ScheduleKind::Vanilla, &[lo, hi], &[qlo, qhi], n).unwrap();
            let reverse = ScalingSpec::new(ScheduleKind::Reverse, &[hi, lo], &[qhi, qlo], n).unwrap().with_framing(false);
            let sk = small_skeleton();
            prop_assert_eq!(
                count_params(&sk.resolve(&vanilla).unwrap()).total,
                count_params(&sk.resolve(&reverse).unwrap()).total
            );
        }

        #[test]
        fn equalize_is_idempotent(spec in arb_spec(), target_m in 2.0f64..6.0) {
            let sk = small_skeleton();
            let target = (target_m * 1e6) as u64;
            if let Ok(once) = equalize_budget(&spec, &sk, target, 0.01) {
                let twice = equalize_budget(&once, &sk, target, 0.01).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
