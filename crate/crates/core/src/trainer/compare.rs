use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{train, MetricsLog, TrainConfig};
use crate::budget::{count_params, equalize_budget, ModelSkeleton};
use crate::data::{unigram_perplexity, Corpus};
use crate::error::{Error, Result};
use crate::profiles::{ScalingSpec, ScheduleKind};

/// Largest relative spread of parameter counts accepted across variants.
pub const BUDGET_GATE: f64 = 0.01;

#[derive(Clone, Debug, Default)]
pub struct CompareOptions {
    /// Train variants concurrently instead of one after another.
    pub parallel: bool,
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub name: String,
    pub spec: ScalingSpec,
    pub params: u64,
    pub log: MetricsLog,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub runs: Vec<VariantRun>,
    pub unigram_ppl: f64,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    variant: &'a str,
    step: usize,
    tokens_seen: u64,
    val_loss: f64,
    val_ppl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub kind: ScheduleKind,
    pub params: u64,
    pub final_val_loss: f64,
    pub final_val_ppl: f64,
}

impl Comparison {
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.runs
            .iter()
            .map(|r| {
                let (l, p) = r.log.final_val().unwrap_or((f64::NAN, f64::NAN));
                SummaryRow {
                    variant: r.name.clone(),
                    kind: r.spec.kind,
                    params: r.params,
                    final_val_loss: l,
                    final_val_ppl: p,
                }
            })
            .collect()
    }

    /// Long-format validation curves: one row per variant and evaluation.
    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for run in &self.runs {
            for row in &run.log.rows {
                if let (Some(val_loss), Some(val_ppl)) = (row.val_loss, row.val_ppl) {
                    w.serialize(CurveRow {
                        variant: &run.name,
                        step: row.step,
                        tokens_seen: row.tokens_seen,
                        val_loss,
                        val_ppl,
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.summary() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whether every layer-wise variant finished at or below the uniform
    /// baseline's perplexity. `None` without exactly one uniform run.
    pub fn lws_beats_baseline(&self) -> Option<bool> {
        let summary = self.summary();
        let mut baselines = summary.iter().filter(|r| r.kind == ScheduleKind::Uniform);
        let base = baselines.next()?;
        if baselines.next().is_some() {
            return None;
        }
        Some(
            summary
                .iter()
                .filter(|r| r.kind != ScheduleKind::Uniform)
                .all(|r| r.final_val_ppl <= base.final_val_ppl),
        )
    }

    /// Plain-text report of final perplexities.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<16} {:>10} {:>10} {:>10}\n", "variant", "params", "val_loss", "val_ppl"));
        for r in self.summary() {
            s.push_str(&format!(
                "{:<16} {:>10} {:>10.4} {:>10.3}\n",
                r.variant, r.params, r.final_val_loss, r.final_val_ppl
            ));
        }
        s.push_str(&format!("unigram ppl      {:>32.3}\n", self.unigram_ppl));
        match self.lws_beats_baseline() {
            Some(true) => s.push_str("informational: every layer-wise variant is at or below the baseline\n"),
            Some(false) => s.push_str("informational: at least one layer-wise variant is above the baseline\n"),
            None => {}
        }
        s
    }
}

/// Rescales every variant's FFN scalars to the parameter count of the variant
/// called `reference`.
pub fn equalize_variants(
    variants: &[(String, ScalingSpec)],
    skeleton: &ModelSkeleton,
    reference: &str,
    tolerance: f64,
) -> Result<Vec<(String, ScalingSpec)>> {
    let (_, ref_spec) = variants
        .iter()
        .find(|(n, _)| n == reference)
        .ok_or_else(|| Error::invalid(format!("reference variant {reference:?} not in the list")))?;
    let target = count_params(&skeleton.resolve(ref_spec)?).total;
    variants
        .iter()
        .map(|(n, s)| Ok((n.clone(), equalize_budget(s, skeleton, target, tolerance)?)))
        .collect()
}

/// Trains each variant with the same seed and data order.
pub fn compare_variants(
    variants: &[(String, ScalingSpec)],
    skeleton: &ModelSkeleton,
    train_config: &TrainConfig,
    corpus: &Corpus,
    options: &CompareOptions,
) -> Result<Comparison> {
    if variants.is_empty() {
        return Err(Error::InvalidExperiment("no variants to compare".into()));
    }
    let configs = variants
        .iter()
        .map(|(_, s)| skeleton.resolve(s))
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<u64> = configs.iter().map(|c| count_params(c).total).collect();
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    let spread = (hi - lo) as f64 / lo as f64;
    if spread > BUDGET_GATE {
        return Err(Error::InvalidExperiment(format!(
            "parameter counts differ by {:.2}% (limit {:.0}%): {counts:?}",
            spread * 100.0,
            BUDGET_GATE * 100.0
        )));
    }

    let run_one = |i: usize| -> Result<VariantRun> {
        let (_, log) = train(&configs[i], train_config, corpus, None)?;
        Ok(VariantRun {
            name: variants[i].0.clone(),
            spec: variants[i].1.clone(),
            params: counts[i],
            log,
        })
    };
    let runs = if options.parallel {
        (0..variants.len()).into_par_iter().map(run_one).collect::<Result<Vec<_>>>()?
    } else {
        (0..variants.len()).map(run_one).collect::<Result<Vec<_>>>()?
    };
    Ok(Comparison { runs, unigram_ppl: unigram_perplexity(corpus) })
}
