use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use lws_core::budget::write_spec_table;
use lws_core::data::{load_corpus, unigram_perplexity, Corpus};
use lws_core::model::checkpoint::{DATA_FILE, MANIFEST_FILE as CHECKPOINT_MANIFEST};
use lws_core::model::load_checkpoint;
use lws_core::presets::{lookup, NamedSpec, PresetFile};
use lws_core::trainer::{equalize_variants, CompareOptions, Comparison, MetricsLog};
use lws_core::{
    compare_variants, count_params, emit_spec_table, evaluate_perplexity, train, Error, LayerProfile, Result,
    ScalingSpec, ScheduleKind, TrainConfig,
};

use crate::args::{Cli, Command, CompareArgs, CountArgs, EvalArgs, PlanArgs, RunArgs, SourceArgs, TrainArgs};
use crate::manifest::{CorpusRecord, RunManifest};
use crate::svg::{line_chart, Series};

const DEFAULT_TOLERANCE: f64 = 0.005;

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan(a) => plan(a),
        Command::Count(a) => count(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
    }
}

fn read_experiment(path: &Path, fallback: &PresetFile) -> Result<PresetFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    match serde_json::from_str::<PresetFile>(&text) {
        Ok(p) => Ok(p),
        Err(experiment_err) => match serde_json::from_str::<ScalingSpec>(&text) {
            Ok(spec) => Ok(PresetFile {
                skeleton: fallback.skeleton.clone(),
                variants: vec![NamedSpec { name: spec.kind.as_str().into(), spec, reported: None }],
                reference: None,
                tolerance: None,
                train: fallback.train.clone(),
            }),
            Err(_) => Err(Error::InvalidInput(format!("{}: {experiment_err}", path.display()))),
        },
    }
}

/// Resolves the variant set named by `--config`, `--preset` or inline flags,
/// falling back to the bundled preset `default_preset`.
fn load_experiment(src: &SourceArgs, default_preset: &str) -> Result<PresetFile> {
    let fallback = lookup(default_preset)?;
    let mut exp = match (&src.config, &src.preset) {
        (Some(path), _) => read_experiment(path, &fallback)?,
        (None, Some(name)) => lookup(name)?,
        (None, None) => fallback,
    };

    let sk = &mut exp.skeleton;
    sk.d_model = src.d_model.unwrap_or(sk.d_model);
    sk.head_dim = src.head_dim.unwrap_or(sk.head_dim);
    sk.n_kv_heads = src.kv_heads.unwrap_or(sk.n_kv_heads);
    sk.vocab_size = src.vocab_size.unwrap_or(sk.vocab_size);
    sk.tie_embeddings |= src.tied;

    let framing = match (src.framing, src.no_framing) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    };

    if src.is_inline() {
        let kind: ScheduleKind = src
            .variant
            .as_deref()
            .ok_or_else(|| usage("an inline spec needs --variant <kind>"))?
            .parse()?;
        let layers = src.layers.ok_or_else(|| usage("an inline spec needs --layers"))?;
        if src.ffn.is_empty() || src.qkv.is_empty() {
            return Err(usage("an inline spec needs both --ffn and --qkv"));
        }
        let mut spec = ScalingSpec::new(kind, &src.ffn, &src.qkv, layers)?;
        if let Some(f) = framing {
            spec = spec.with_framing(f);
        }
        exp.variants = vec![NamedSpec { name: kind.as_str().into(), spec, reported: None }];
        exp.reference = None;
        return Ok(exp);
    }

    if let Some(name) = &src.variant {
        let names: Vec<String> = exp.variants.iter().map(|v| v.name.clone()).collect();
        exp.variants.retain(|v| &v.name == name);
        if exp.variants.is_empty() {
            return Err(usage(format!("no variant {name:?}; available: {}", names.join(", "))));
        }
        if exp.reference.as_deref() != Some(name.as_str()) {
            exp.reference = None;
        }
    }
    if let Some(f) = framing {
        for v in &mut exp.variants {
            v.spec = v.spec.clone().with_framing(f);
        }
    }
    Ok(exp)
}

#[derive(Serialize)]
struct PlanEntry<'a> {
    name: &'a str,
    spec: &'a ScalingSpec,
    d_model: usize,
    profiles: Vec<LayerProfile>,
}

fn plan_table(entry: &PlanEntry) -> String {
    let s = entry.spec;
    let mut out = format!(
        "{}: {}, {} layers, framing {}, d_model {}\n",
        entry.name,
        s.kind,
        s.n_layers,
        if s.framing { "on" } else { "off" },
        entry.d_model
    );
    out.push_str("layer  heads  kv_heads  head_dim  ffn_dim   alpha    beta\n");
    for p in &entry.profiles {
        out.push_str(&format!(
            "{:>5}  {:>5}  {:>8}  {:>8}  {:>7}  {:>6.3}  {:>6.3}\n",
            p.layer_index, p.n_heads, p.n_kv_heads, p.head_dim, p.ffn_dim, p.alpha_effective, p.beta_effective
        ));
    }
    out
}

fn plan(args: PlanArgs) -> Result<()> {
    let mut manifest = RunManifest::start("plan");
    let exp = load_experiment(&args.source, "reference")?;
    let entries = exp
        .variants
        .iter()
        .map(|v| {
            Ok(PlanEntry {
                name: &v.name,
                spec: &v.spec,
                d_model: exp.skeleton.d_model,
                profiles: exp.skeleton.resolve(&v.spec)?.profiles,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rendered = serde_json::to_string_pretty(&entries)?;
    if args.json {
        println!("{rendered}");
    } else {
        let tables: Vec<String> = entries.iter().map(plan_table).collect();
        print!("{}", tables.join("\n"));
    }
    if let Some(out) = &args.out {
        manifest.configs = json!({ "skeleton": exp.skeleton, "plans": entries });
        manifest.write_output(&out.join("plan.json"), rendered + "\n")?;
        manifest.finish(out)?;
    }
    Ok(())
}

fn count(args: CountArgs) -> Result<()> {
    let mut manifest = RunManifest::start("count");
    let exp = load_experiment(&args.source, "reference")?;
    let rows = emit_spec_table(&exp.pairs(), &exp.skeleton)?;
    let mut csv = Vec::new();
    write_spec_table(&rows, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    for v in &exp.variants {
        if let Some(r) = v.reported {
            let c = count_params(&exp.skeleton.resolve(&v.spec)?);
            eprintln!(
                "{}: total {:.2}M vs reported {}M ({:+.2}%), non-embedding {:.2}M vs {}M ({:+.2}%)",
                v.name,
                c.total_m(),
                r.params_m,
                (c.total_m() / r.params_m - 1.0) * 100.0,
                c.non_embedding_m(),
                r.non_embed_m,
                (c.non_embedding_m() / r.non_embed_m - 1.0) * 100.0
            );
        }
    }
    if let Some(out) = &args.out {
        let breakdowns = exp
            .variants
            .iter()
            .map(|v| Ok(json!({ "name": v.name, "spec": v.spec, "params": count_params(&exp.skeleton.resolve(&v.spec)?) })))
            .collect::<Result<Vec<_>>>()?;
        manifest.configs = json!({ "skeleton": exp.skeleton, "variants": breakdowns });
        manifest.write_output(&out.join("count.csv"), &csv)?;
        manifest.finish(out)?;
    }
    Ok(())
}

fn train_config(exp: &PresetFile, run: &RunArgs) -> Result<TrainConfig> {
    let mut tc = exp.train.clone().unwrap_or_else(|| TrainConfig::with_steps(1000));
    if let Some(steps) = run.steps {
        tc.steps = steps;
        tc.warmup_steps = (steps / 50).max(1);
        tc.eval_interval = tc.eval_interval.min(steps.max(1));
    }
    if let Some(every) = run.eval_interval {
        tc.eval_interval = every;
    }
    if let Some(seed) = run.seed {
        tc.seed = seed;
    }
    tc.record_timing = run.timing;
    if run.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    tc.validate()?;
    Ok(tc)
}

fn corpus_for(run: &RunArgs, seq_len: usize, seed: u64) -> Result<Corpus> {
    for p in &run.corpus {
        if !p.is_file() {
            return Err(Error::InvalidInput(format!("corpus file {} not found", p.display())));
        }
    }
    load_corpus(&run.corpus, run.val_fraction, seed, seq_len)
}

fn run_dirs(run: &RunArgs, base_seed: u64) -> Vec<(u64, PathBuf)> {
    (0..run.repeat as u64)
        .map(|i| {
            let seed = base_seed + i;
            let dir = if run.repeat == 1 { run.out.clone() } else { run.out.join(format!("seed-{seed}")) };
            (seed, dir)
        })
        .collect()
}

fn csv_bytes(log: &MetricsLog) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    Ok(buf)
}

fn ppl_series(label: &str, log: &MetricsLog) -> Series {
    let points = log
        .rows
        .iter()
        .filter_map(|r| r.val_ppl.map(|p| (r.tokens_seen as f64, p)))
        .collect();
    Series { label: label.to_string(), points }
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::start("train");
    let exp = load_experiment(&args.source, "desk")?;
    let variant = match exp.variants.as_slice() {
        [only] => only.clone(),
        many => match &exp.reference {
            Some(r) => many.iter().find(|v| &v.name == r).cloned().ok_or_else(|| usage("reference variant missing"))?,
            None => {
                let names: Vec<&str> = many.iter().map(|v| v.name.as_str()).collect();
                return Err(usage(format!("pick one variant with --variant: {}", names.join(", "))));
            }
        },
    };
    let run = &args.run;
    let mut tc = train_config(&exp, run)?;
    let config = exp.skeleton.resolve(&variant.spec)?;
    if config.vocab_size < 256 {
        return Err(usage(format!("byte corpora need vocab_size 256, got {}", config.vocab_size)));
    }
    let corpus = corpus_for(run, tc.seq_len, tc.seed)?;
    manifest.seed = Some(tc.seed);
    manifest.corpus = Some(CorpusRecord::of(&corpus));
    manifest.configs = json!({
        "variant": variant.name,
        "spec": variant.spec,
        "model": config,
        "params": count_params(&config),
        "train": tc,
    });

    let mut series = Vec::new();
    let mut failure = None;
    for (seed, dir) in run_dirs(run, tc.seed) {
        tc.seed = seed;
        let ckpt = dir.join("checkpoint");
        match train(&config, &tc, &corpus, Some(&ckpt)) {
            Ok((_, log)) => {
                manifest.write_output(&dir.join("metrics.csv"), csv_bytes(&log)?)?;
                manifest.record(&ckpt.join(CHECKPOINT_MANIFEST));
                manifest.record(&ckpt.join(DATA_FILE));
                if let Some((loss, ppl)) = log.final_val() {
                    println!("{} seed {seed}: final val loss {loss:.4}, ppl {ppl:.3}", variant.name);
                }
                series.push(ppl_series(&format!("{} seed {seed}", variant.name), &log));
            }
            Err(Error::TrainingDivergence { step, reason, partial }) => {
                manifest.write_output(&dir.join("metrics.csv"), csv_bytes(&partial)?)?;
                failure = Some(Error::TrainingDivergence { step, reason, partial });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if run.svg() && !series.is_empty() {
        let svg = line_chart("Validation perplexity", "tokens", "val ppl", &series);
        manifest.write_output(&run.out.join("val_ppl.svg"), svg)?;
    }
    manifest.finish(&run.out)?;
    failure.map_or(Ok(()), Err)
}

fn eval(args: EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("eval");
    let (ckpt, weights) = load_checkpoint(&args.checkpoint)?;
    let config = &ckpt.config;
    let seq_len = args.seq_len.unwrap_or(config.max_seq_len);
    if seq_len == 0 || seq_len > config.max_seq_len {
        return Err(usage(format!("--seq-len must lie in [1, {}]", config.max_seq_len)));
    }
    for p in &args.corpus {
        if !p.is_file() {
            return Err(Error::InvalidInput(format!("corpus file {} not found", p.display())));
        }
    }
    let corpus = load_corpus(&args.corpus, args.val_fraction, 0, seq_len)?;
    let (val_loss, val_ppl) = evaluate_perplexity(&weights, config, &corpus.val, seq_len, args.eval_tokens)?;
    let unigram = unigram_perplexity(&corpus);
    println!("val loss {val_loss:.4}, val ppl {val_ppl:.3}, unigram ppl {unigram:.3}");
    if let Some(out) = &args.out {
        let report = json!({
            "checkpoint": args.checkpoint,
            "step": ckpt.step,
            "seq_len": seq_len,
            "eval_tokens": args.eval_tokens,
            "val_loss": val_loss,
            "val_ppl": val_ppl,
            "unigram_ppl": unigram,
        });
        manifest.corpus = Some(CorpusRecord::of(&corpus));
        manifest.configs = json!({ "model": config });
        manifest.write_output(&out.join("eval.json"), serde_json::to_vec_pretty(&report)?)?;
        manifest.finish(out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RepeatRow<'a> {
    seed: u64,
    variant: &'a str,
    params: u64,
    final_val_loss: f64,
    final_val_ppl: f64,
}

fn write_comparison(manifest: &mut RunManifest, dir: &Path, cmp: &Comparison, svg: bool) -> Result<()> {
    let mut curves = Vec::new();
    cmp.write_curves_csv(&mut curves)?;
    manifest.write_output(&dir.join("compare.csv"), curves)?;
    let mut summary = Vec::new();
    cmp.write_summary_csv(&mut summary)?;
    manifest.write_output(&dir.join("summary.csv"), summary)?;
    manifest.write_output(&dir.join("report.txt"), cmp.report())?;
    if svg {
        let series: Vec<Series> = cmp.runs.iter().map(|r| ppl_series(&r.name, &r.log)).collect();
        let chart = line_chart("Validation perplexity", "tokens", "val ppl", &series);
        manifest.write_output(&dir.join("compare.svg"), chart)?;
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let mut manifest = RunManifest::start("compare");
    let exp = load_experiment(&args.source, "desk")?;
    let run = &args.run;
    let mut tc = train_config(&exp, run)?;
    let tolerance = args.tolerance.or(exp.tolerance).unwrap_or(DEFAULT_TOLERANCE);
    let variants = match &exp.reference {
        Some(r) => equalize_variants(&exp.pairs(), &exp.skeleton, r, tolerance)?,
        None => exp.pairs(),
    };
    let corpus = corpus_for(run, tc.seq_len, tc.seed)?;
    let params = variants
        .iter()
        .map(|(n, s)| Ok(json!({ "name": n, "spec": s, "params": count_params(&exp.skeleton.resolve(s)?) })))
        .collect::<Result<Vec<_>>>()?;
    manifest.seed = Some(tc.seed);
    manifest.corpus = Some(CorpusRecord::of(&corpus));
    manifest.configs = json!({
        "skeleton": exp.skeleton,
        "reference": exp.reference,
        "tolerance": tolerance,
        "variants": params,
        "train": tc,
    });

    let options = CompareOptions { parallel: args.parallel };
    let mut repeats = Vec::new();
    for (seed, dir) in run_dirs(run, tc.seed) {
        tc.seed = seed;
        let cmp = compare_variants(&variants, &exp.skeleton, &tc, &corpus, &options)?;
        if run.repeat > 1 {
            println!("seed {seed}");
        }
        print!("{}", cmp.report());
        write_comparison(&mut manifest, &dir, &cmp, run.svg())?;
        for row in cmp.summary() {
            repeats.push((seed, row));
        }
    }
    if run.repeat > 1 {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (seed, r) in &repeats {
            w.serialize(RepeatRow {
                seed: *seed,
                variant: &r.variant,
                params: r.params,
                final_val_loss: r.final_val_loss,
                final_val_ppl: r.final_val_ppl,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        manifest.write_output(&run.out.join("repeats.csv"), bytes)?;
    }
    manifest.finish(&run.out)?;
    Ok(())
}
