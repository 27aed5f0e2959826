use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: [&str; 7] = [
    "step",
    "tokens_seen",
    "train_loss",
    "val_loss",
    "val_ppl",
    "tokens_per_sec",
    "wall_clock_s",
];

/// One optimizer step. Validation columns are present only on evaluation
/// steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub tokens_seen: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_ppl: Option<f64>,
    pub tokens_per_sec: f64,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.step < row.step));
        self.rows.push(row);
    }

    /// `(step, val_loss)` for every evaluated step.
    pub fn val_curve(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.val_loss.map(|l| (r.step, l)))
            .collect()
    }

    pub fn final_val(&self) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .rev()
            .find_map(|r| Some((r.val_loss?, r.val_ppl?)))
    }

    /// Trailing mean of the validation loss over evaluations within the last
    /// `window` steps (inclusive of the current one).
    pub fn smoothed_val_loss(&self, window: usize) -> Vec<(usize, f64)> {
        let curve = self.val_curve();
        curve
            .iter()
            .map(|&(step, _)| {
                let lo = step.saturating_sub(window.saturating_sub(1));
                let vals: Vec<f64> = curve
                    .iter()
                    .filter(|(s, _)| *s >= lo && *s <= step)
                    .map(|(_, l)| *l)
                    .collect();
                (step, vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(METRICS_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.tokens_seen.to_string(),
                r.train_loss.to_string(),
                opt(r.val_loss),
                opt(r.val_ppl),
                r.tokens_per_sec.to_string(),
                r.wall_clock_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        Ok(MetricsLog { rows })
    }
}
