//! Exit criteria for the toolkit. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero when any of them fails.
//!
//! The desk-scale training criterion trains on a deterministic synthetic
//! corpus unless `LWS_ACCEPTANCE_CORPUS` names one or more files
//! (colon separated). Criterion ids given as arguments restrict the run to
//! those criteria.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lws_core::data::{synthetic_corpus, unigram_perplexity};
use lws_core::model::{finite_diff_check, forward, sample_weight_indices, tensor_layout, TensorRole, Weights};
use lws_core::presets::{desk_comparison, reference_architectures};
use lws_core::trainer::{equalize_variants, ppl_from_loss, CompareOptions, BUDGET_GATE};
use lws_core::{
    build_corpus, compare_variants, count_params, train, Batch, Corpus, ModelConfig, ModelSkeleton, ScalingSpec,
    ScheduleKind, TrainConfig,
};

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "reference parameter counts within 2%", limit: Some(secs(1)), run: reference_counts },
        Criterion { id: 2, name: "loss to perplexity pairs at 3 decimals", limit: Some(secs(1)), run: loss_ppl_pairs },
        Criterion { id: 3, name: "finite-difference gradient check", limit: Some(secs(60)), run: gradient_check },
        Criterion { id: 4, name: "grouped-query attention degeneracy", limit: Some(secs(10)), run: gqa_degeneracy },
        Criterion { id: 5, name: "profile invariants over 1000 specs", limit: Some(secs(10)), run: profile_invariants },
        Criterion { id: 6, name: "desk-scale training", limit: Some(secs(30 * 60)), run: desk_training },
        Criterion { id: 7, name: "bit-identical metrics for equal seeds", limit: None, run: determinism },
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected: Vec<&Criterion> = criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)).collect();
    let mut failed = 0;
    for c in &selected {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(detail), Some(limit)) if elapsed > limit => {
                Err(format!("{detail}; took {:.2}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
            }
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{}] {} ({:.2}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", selected.len() - failed, selected.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reference_counts() -> Outcome {
    const BAND: f64 = 0.02;
    let preset = reference_architectures();
    let mut worst = 0.0f64;
    let mut misses = Vec::new();
    for v in &preset.variants {
        let reported = v.reported.ok_or_else(|| format!("{} has no reported counts", v.name))?;
        let config = preset.skeleton.resolve(&v.spec).map_err(|e| e.to_string())?;
        let counts = count_params(&config);
        for (label, got, want) in [
            ("total", counts.total_m(), reported.params_m),
            ("non-embedding", counts.non_embedding_m(), reported.non_embed_m),
        ] {
            let rel = (got - want) / want;
            worst = worst.max(rel.abs());
            if rel.abs() > BAND {
                misses.push(format!("{} {label} {got:.2}M vs {want}M ({:+.2}%)", v.name, rel * 100.0));
            }
        }
    }
    check(preset.variants.len() == 7, || format!("expected 7 reference rows, found {}", preset.variants.len()))?;
    check(misses.is_empty(), || misses.join("; "))?;
    Ok(format!("worst deviation {:.2}%", worst * 100.0))
}

fn loss_ppl_pairs() -> Outcome {
    const PAIRS: [(&str, f64, &str); 7] = [
        ("baseline 12L", 1.6018, "4.962"),
        ("vanilla 12L", 1.6062, "4.984"),
        ("baseline 18L", 1.6864, "5.400"),
        ("vanilla 18L", 1.6279, "5.093"),
        ("framed", 1.6490, "5.205"),
        ("reverse", 1.6266, "5.087"),
        ("crown", 1.6206, "5.057"),
    ];
    let misses: Vec<String> = PAIRS
        .iter()
        .filter_map(|&(name, loss, want)| {
            let got = format!("{:.3}", ppl_from_loss(loss));
            (got != want).then(|| format!("{name}: exp({loss}) = {got}, reported {want}"))
        })
        .collect();
    check(misses.is_empty(), || misses.join("; "))?;
    Ok("all 7 pairs match".into())
}

/// Overwrites every tensor with uniform noise: matrices in `±scale`, norm
/// gains in `[0.5, 1.5]`.
fn randomize(config: &ModelConfig, scale: f64, seed: u64) -> Weights<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = tensor_layout(config)
        .iter()
        .map(|info| {
            (0..info.numel())
                .map(|_| match info.role {
                    TensorRole::Norm => rng.gen_range(0.5..1.5),
                    _ => rng.gen_range(-scale..scale),
                })
                .collect()
        })
        .collect();
    Weights::from_tensors(config, tensors)
}

fn random_batch(batch_size: usize, seq_len: usize, vocab: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch_size * seq_len;
    let tokens: Vec<u8> = (0..batch_size * (seq_len + 1)).map(|_| rng.gen_range(0..vocab) as u8).collect();
    let starts: Vec<usize> = (0..batch_size).map(|b| b * (seq_len + 1)).collect();
    let batch = Batch::from_windows(&tokens, &starts, seq_len);
    debug_assert_eq!(batch.inputs.len(), n);
    batch
}

fn gradient_check() -> Outcome {
    const SAMPLES: usize = 256;
    const EPSILON: f64 = 1e-4;
    const LIMIT: f64 = 1e-4;
    let skeleton = ModelSkeleton {
        d_model: 32,
        vocab_size: 64,
        max_seq_len: 16,
        head_dim: 8,
        n_kv_heads: 2,
        tie_embeddings: false,
        ffn_alignment: 1,
    };
    let spec = ScalingSpec::new(ScheduleKind::Vanilla, &[1.0, 3.0], &[0.5, 1.0], 2).map_err(|e| e.to_string())?;
    let config = skeleton.resolve(&spec).map_err(|e| e.to_string())?;
    let weights = randomize(&config, 0.2, 17);
    let batch = random_batch(2, 16, 64, 18);
    let indices = sample_weight_indices(&weights, SAMPLES, 19);
    check(indices.len() >= 200, || format!("only {} weights sampled", indices.len()))?;
    let worst = finite_diff_check(&weights, &config, &batch, &indices, EPSILON).map_err(|e| e.to_string())?;
    check(worst < LIMIT, || format!("max relative error {worst:.3e} over {} weights", indices.len()))?;
    Ok(format!("max relative error {worst:.3e} over {} weights", indices.len()))
}

fn rms_scale(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = 1.0 / (ms + 1e-6).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * r * g).collect()
}

fn vec_mat(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    (0..cols).map(|c| x.iter().enumerate().map(|(i, v)| v * w[i * cols + c]).sum()).collect()
}

fn rotate(v: &mut [f64], pos: usize) {
    let dh = v.len();
    for i in 0..dh / 2 {
        let angle = pos as f64 * 10_000f64.powf(-(2.0 * i as f64) / dh as f64);
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = a * angle.cos() - b * angle.sin();
        v[2 * i + 1] = a * angle.sin() + b * angle.cos();
    }
}

/// Straight-line single-sequence forward pass. `kv_head_of` maps a query head
/// to the key/value head it reads.
fn reference_logits(w: &Weights<f64>, config: &ModelConfig, tokens: &[u32], kv_head_of: &dyn Fn(usize) -> usize) -> Vec<f64> {
    let d = config.d_model;
    let mut xs: Vec<Vec<f64>> = tokens.iter().map(|&t| w.embedding[t as usize * d..][..d].to_vec()).collect();
    for (lw, p) in w.layers.iter().zip(&config.profiles) {
        let dh = p.head_dim;
        let (qd, kvd) = (p.n_heads * dh, p.n_kv_heads * dh);
        let mut qs = Vec::new();
        let mut ks = Vec::new();
        let mut vs = Vec::new();
        for (pos, x) in xs.iter().enumerate() {
            let h = rms_scale(x, &lw.attn_norm);
            let q = vec_mat(&h, &lw.wq, qd);
            let k = vec_mat(&h, &lw.wk, kvd);
            let mut q_heads: Vec<Vec<f64>> = (0..p.n_heads)
                .map(|i| rms_scale(&q[i * dh..][..dh], &lw.q_norm[i * dh..][..dh]))
                .collect();
            let mut k_heads: Vec<Vec<f64>> = (0..p.n_kv_heads)
                .map(|i| rms_scale(&k[i * dh..][..dh], &lw.k_norm[i * dh..][..dh]))
                .collect();
            q_heads.iter_mut().chain(k_heads.iter_mut()).for_each(|v| rotate(v, pos));
            qs.push(q_heads);
            ks.push(k_heads);
            vs.push(vec_mat(&h, &lw.wv, kvd));
        }
        for t in 0..xs.len() {
            let mut attn = vec![0.0; qd];
            for head in 0..p.n_heads {
                let g = kv_head_of(head);
                let scores: Vec<f64> = (0..=t)
                    .map(|u| qs[t][head].iter().zip(&ks[u][g]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (u, e) in exps.iter().enumerate() {
                    for j in 0..dh {
                        attn[head * dh + j] += e / z * vs[u][g * dh + j];
                    }
                }
            }
            let o = vec_mat(&attn, &lw.wo, d);
            xs[t].iter_mut().zip(&o).for_each(|(x, v)| *x += v);
        }
        for x in xs.iter_mut() {
            let h = rms_scale(x, &lw.ffn_norm);
            let gate = vec_mat(&h, &lw.w_gate, p.ffn_dim);
            let up = vec_mat(&h, &lw.w_up, p.ffn_dim);
            let act: Vec<f64> = gate.iter().zip(&up).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
            let down = vec_mat(&act, &lw.w_down, d);
            x.iter_mut().zip(&down).for_each(|(x, v)| *x += v);
        }
    }
    let vocab = config.vocab_size;
    xs.iter()
        .flat_map(|x| {
            let h = rms_scale(x, &w.final_norm);
            if config.tie_embeddings {
                (0..vocab)
                    .map(|t| h.iter().zip(&w.embedding[t * d..][..d]).map(|(a, b)| a * b).sum())
                    .collect::<Vec<f64>>()
            } else {
                vec_mat(&h, &w.lm_head, vocab)
            }
        })
        .collect()
}

fn degeneracy_error(skeleton: &ModelSkeleton, spec: &ScalingSpec, kv_head_of: &dyn Fn(usize) -> usize, seed: u64) -> Result<f64, String> {
    let config = skeleton.resolve(spec).map_err(|e| e.to_string())?;
    let weights = randomize(&config, 0.3, seed);
    let batch = random_batch(2, 12, skeleton.vocab_size, seed + 1);
    let logits = forward(&weights, &config, &batch).map_err(|e| e.to_string())?.logits;
    let mut reference = Vec::new();
    for row in batch.inputs.chunks(batch.seq_len) {
        reference.extend(reference_logits(&weights, &config, row, kv_head_of));
    }
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = logits.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(diff / scale)
}

fn gqa_degeneracy() -> Outcome {
    const LIMIT: f64 = 1e-6;
    let base = ModelSkeleton {
        d_model: 32,
        vocab_size: 40,
        max_seq_len: 16,
        head_dim: 8,
        n_kv_heads: 4,
        tie_embeddings: false,
        ffn_alignment: 1,
    };
    let mha_spec = ScalingSpec::new(ScheduleKind::Uniform, &[2.0], &[1.0], 2).map_err(|e| e.to_string())?;
    let mha_config = base.resolve(&mha_spec).map_err(|e| e.to_string())?;
    check(mha_config.profiles.iter().all(|p| p.n_heads == p.n_kv_heads), || "query heads differ from kv heads".into())?;
    let mha = degeneracy_error(&base, &mha_spec, &|h| h, 41)?;

    let mqa_skeleton = ModelSkeleton { n_kv_heads: 1, tie_embeddings: true, ..base };
    let mqa_spec = ScalingSpec::new(ScheduleKind::Vanilla, &[1.0, 3.0], &[0.5, 1.5], 3).map_err(|e| e.to_string())?;
    let mqa = degeneracy_error(&mqa_skeleton, &mqa_spec, &|_| 0, 43)?;
    check(mha < LIMIT && mqa < LIMIT, || format!("relative error MHA {mha:.3e}, MQA {mqa:.3e}"))?;
    Ok(format!("relative error MHA {mha:.3e}, MQA {mqa:.3e}"))
}

fn random_spec(rng: &mut ChaCha8Rng) -> ScalingSpec {
    let kind = ScheduleKind::ALL[rng.gen_range(0..ScheduleKind::ALL.len())];
    let n_layers = rng.gen_range(if kind == ScheduleKind::Crown { 3 } else { 2 }..=36);
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> {
        let a: f64 = rng.gen_range(lo..hi);
        let b: f64 = rng.gen_range(lo..hi);
        let c: f64 = rng.gen_range(lo..hi);
        match kind {
            ScheduleKind::Uniform => vec![a, a],
            ScheduleKind::Reverse => vec![a.max(b), a.min(b)],
            ScheduleKind::Crown => vec![a, c, b],
            _ => vec![a.min(b), a.max(b)],
        }
    };
    let ffn = draw(0.25, 6.0);
    let qkv = draw(0.25, 2.5);
    let framing = rng.gen_bool(0.5);
    ScalingSpec::new(kind, &ffn, &qkv, n_layers).expect("valid random spec").with_framing(framing)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn profile_invariants() -> Outcome {
    const SPECS: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tally = [0usize; 3];
    for case in 0..SPECS {
        let spec = random_spec(&mut rng);
        let head_dim = [8, 16, 32, 64][rng.gen_range(0..4)];
        let n_kv_heads = [1, 2, 4][rng.gen_range(0..3)];
        let skeleton = ModelSkeleton {
            d_model: head_dim * rng.gen_range(4..=16),
            vocab_size: 256,
            max_seq_len: 64,
            head_dim,
            n_kv_heads,
            tie_embeddings: false,
            ffn_alignment: 1,
        };
        let fail = |what: &str| format!("case {case}: {what} for {spec:?}");
        let profiles = skeleton.resolve(&spec).map_err(|e| fail(&e.to_string()))?.profiles;
        let n = spec.n_layers;
        let betas: Vec<f64> = profiles.iter().map(|p| p.beta_effective).collect();
        let alphas: Vec<f64> = profiles.iter().map(|p| p.alpha_effective).collect();

        check(profiles.len() == n, || fail("layer count"))?;
        check(
            profiles.iter().all(|p| p.n_heads >= n_kv_heads && p.n_heads % n_kv_heads == 0),
            || fail("head count not a positive multiple of kv heads"),
        )?;

        for (values, anchors) in [(&betas, &spec.ffn_scalars), (&alphas, &spec.qkv_scalars)] {
            let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
            if spec.framing {
                let top = anchors.iter().cloned().fold(f64::MIN, f64::max);
                check(values[0] == top && values[n - 1] == top, || fail("framed endpoints not at the largest scalar"))?;
            } else {
                check(close(values[0], first) && close(values[n - 1], last), || fail("endpoints differ from anchors"))?;
            }
        }

        match spec.kind {
            ScheduleKind::Crown => {
                tally[0] += 1;
                let m = (n - 1) / 2;
                for (values, anchors) in [(&betas, &spec.ffn_scalars), (&alphas, &spec.qkv_scalars)] {
                    check(close(values[m], anchors[1]), || fail("crown middle scalar not at floor((n-1)/2)"))?;
                    if anchors[1] >= anchors[0].max(anchors[2]) && !spec.framing {
                        let peak = values.iter().cloned().fold(f64::MIN, f64::max);
                        check(values[m] == peak, || fail("crown peak misplaced"))?;
                    }
                }
                let flat = ScalingSpec::new(ScheduleKind::Crown, &[spec.ffn_scalars[0]; 3], &[spec.qkv_scalars[0]; 3], n)
                    .map_err(|e| fail(&e.to_string()))?
                    .with_framing(spec.framing);
                let uniform = ScalingSpec::new(ScheduleKind::Uniform, &[spec.ffn_scalars[0]], &[spec.qkv_scalars[0]], n)
                    .map_err(|e| fail(&e.to_string()))?;
                let a = skeleton.resolve(&flat).map_err(|e| fail(&e.to_string()))?.profiles;
                let b = skeleton.resolve(&uniform).map_err(|e| fail(&e.to_string()))?.profiles;
                check(a == b, || fail("flat crown differs from uniform"))?;
            }
            ScheduleKind::Vanilla | ScheduleKind::Reverse => {
                tally[1] += 1;
                let (ffn, qkv) = (&spec.ffn_scalars, &spec.qkv_scalars);
                let mirror_kind =
                    if spec.kind == ScheduleKind::Vanilla { ScheduleKind::Reverse } else { ScheduleKind::Vanilla };
                let original = spec.clone().with_framing(false);
                let mirror = ScalingSpec::new(mirror_kind, &[ffn[1], ffn[0]], &[qkv[1], qkv[0]], n)
                    .map_err(|e| fail(&e.to_string()))?
                    .with_framing(false);
                for (fwd, rev) in [
                    (original.ffn_schedule(), mirror.ffn_schedule()),
                    (original.qkv_schedule(), mirror.qkv_schedule()),
                ] {
                    let (fwd, rev) = (fwd.map_err(|e| fail(&e.to_string()))?, rev.map_err(|e| fail(&e.to_string()))?);
                    check((0..n).all(|i| close(fwd[i], rev[n - 1 - i])), || fail("vanilla and reverse not mirrored"))?;
                }
            }
            ScheduleKind::Uniform => {
                tally[2] += 1;
                check(profiles.windows(2).all(|w| {
                    (w[0].n_heads, w[0].ffn_dim, w[0].beta_effective) == (w[1].n_heads, w[1].ffn_dim, w[1].beta_effective)
                }), || fail("uniform layers differ"))?;
            }
            ScheduleKind::Framed => {}
        }
    }
    Ok(format!(
        "{SPECS} specs ({} crown, {} vanilla/reverse, {} uniform)",
        tally[0], tally[1], tally[2]
    ))
}

const MIN_CORPUS_BYTES: usize = 2_000_000;
const SYNTHETIC_BYTES: usize = 2_200_000;
const VAL_FRACTION: f64 = 0.05;

fn desk_corpus(seq_len: usize, seed: u64) -> Result<Corpus, String> {
    let raw = match std::env::var("LWS_ACCEPTANCE_CORPUS") {
        Ok(paths) if !paths.is_empty() => {
            let mut raw = Vec::new();
            for p in std::env::split_paths(&paths) {
                raw.extend(std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?);
            }
            raw
        }
        _ => synthetic_corpus(SYNTHETIC_BYTES, seed),
    };
    build_corpus(&raw, VAL_FRACTION, seed, seq_len).map_err(|e| e.to_string())
}

fn desk_training() -> Outcome {
    const SMOOTHING: usize = 200;
    let preset = desk_comparison();
    let tc = preset.train.clone().ok_or("desk preset has no training settings")?;
    let skeleton = &preset.skeleton;
    check(
        skeleton.d_model == 64 && skeleton.n_kv_heads == 2 && tc.seq_len == 256 && tc.steps == 2000,
        || "desk preset drifted from d_model 64, G=2, seq 256, 2000 steps".into(),
    )?;
    let names: Vec<&str> = preset.variants.iter().map(|v| v.name.as_str()).collect();
    check(names == ["baseline", "vanilla", "reverse", "crown"], || format!("unexpected variants {names:?}"))?;
    check(preset.variants.iter().all(|v| v.spec.n_layers == 8), || "every desk variant needs 8 layers".into())?;

    let corpus = desk_corpus(tc.seq_len, tc.seed)?;
    let bytes = corpus.train.len() + corpus.val.len();
    check(bytes >= MIN_CORPUS_BYTES, || format!("corpus has {bytes} bytes"))?;
    let unigram = unigram_perplexity(&corpus);

    let reference = preset.reference.as_deref().ok_or("desk preset names no reference variant")?;
    let tolerance = preset.tolerance.ok_or("desk preset has no tolerance")?;
    let variants = equalize_variants(&preset.pairs(), skeleton, reference, tolerance).map_err(|e| e.to_string())?;
    let counts = variants
        .iter()
        .map(|(_, s)| skeleton.resolve(s).map(|c| count_params(&c).total))
        .collect::<lws_core::Result<Vec<u64>>>()
        .map_err(|e| e.to_string())?;
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    let spread = (hi - lo) as f64 / lo as f64;
    check(spread <= BUDGET_GATE, || format!("budgets differ by {:.2}%", spread * 100.0))?;

    let comparison =
        compare_variants(&variants, skeleton, &tc, &corpus, &CompareOptions::default()).map_err(|e| e.to_string())?;
    print!("{}", comparison.report());

    let mut problems = Vec::new();
    let mut finals = Vec::new();
    for run in &comparison.runs {
        let (_, ppl) = run.log.final_val().ok_or_else(|| format!("{} logged no evaluation", run.name))?;
        finals.push(format!("{} {ppl:.3}", run.name));
        if ppl.is_nan() || ppl >= unigram {
            problems.push(format!("{} final ppl {ppl:.3} not below unigram {unigram:.3}", run.name));
        }
        let smoothed = run.log.smoothed_val_loss(SMOOTHING);
        let tail: Vec<&(usize, f64)> = smoothed.iter().filter(|(s, _)| 2 * *s >= tc.steps).collect();
        if let Some(w) = tail.windows(2).find(|w| w[1].1 > w[0].1) {
            problems.push(format!(
                "{} smoothed val loss rises from {:.4} at step {} to {:.4} at step {}",
                run.name, w[0].1, w[0].0, w[1].1, w[1].0
            ));
        }
    }
    check(problems.is_empty(), || problems.join("; "))?;
    Ok(format!(
        "budget spread {:.2}%, unigram ppl {unigram:.3}, final ppl {}",
        spread * 100.0,
        finals.join(", ")
    ))
}

fn determinism() -> Outcome {
    let preset = desk_comparison();
    let mut tc = preset.train.clone().ok_or("desk preset has no training settings")?;
    tc.steps = 10;
    tc.eval_interval = 5;
    tc.warmup_steps = 2;
    tc.record_timing = false;
    let corpus = desk_corpus(tc.seq_len, tc.seed)?;
    let config = preset
        .skeleton
        .resolve(&preset.variant("crown").ok_or("no crown variant")?.spec)
        .map_err(|e| e.to_string())?;
    let run = |tc: &TrainConfig| -> Result<Vec<u8>, String> {
        let (_, log) = train(&config, tc, &corpus, None).map_err(|e| e.to_string())?;
        let mut csv = Vec::new();
        log.write_csv(&mut csv).map_err(|e| e.to_string())?;
        Ok(csv)
    };
    let (a, b) = (run(&tc)?, run(&tc)?);
    check(a == b, || "metrics CSVs differ between identical runs".into())?;
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    check(lines == 11, || format!("expected header plus 10 rows, got {lines} lines"))?;
    // a different seed must change the trace
    tc.seed += 1;
    let c = run(&tc)?;
    check(a != c, || "changing the seed left the metrics unchanged".into())?;
    Ok(format!("{} identical bytes over 10 steps", a.len()))
}
