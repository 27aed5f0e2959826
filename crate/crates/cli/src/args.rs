use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "lws-forge", version, about = "Plan, count, train and compare layer-wise scaled transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-layer head counts and FFN widths.
    Plan(PlanArgs),
    /// Count parameters and write the spec table as CSV.
    Count(CountArgs),
    /// Train one variant on a byte corpus.
    Train(TrainArgs),
    /// Score a checkpoint on the validation split of a corpus.
    Eval(EvalArgs),
    /// Equalize budgets, train every variant and compare validation perplexity.
    Compare(CompareArgs),
}

/// Where the variants come from: a JSON file, a bundled preset or inline
/// flags. Inline flags build a single spec on top of the file or preset
/// skeleton.
#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    /// Experiment JSON (skeleton, variants, train) or a single scaling spec.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled preset: `reference`, `desk` or one of the reference row names.
    #[arg(long)]
    pub preset: Option<String>,
    /// Variant name within the experiment, or the schedule kind of an inline
    /// spec (uniform, vanilla, framed, reverse, crown).
    #[arg(long)]
    pub variant: Option<String>,
    /// Inline FFN scalars, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub ffn: Vec<f64>,
    /// Inline attention scalars, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub qkv: Vec<f64>,
    /// Layer count of an inline spec.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Force framing on for an inline spec.
    #[arg(long, conflicts_with = "no_framing")]
    pub framing: bool,
    /// Force framing off for an inline spec.
    #[arg(long)]
    pub no_framing: bool,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub kv_heads: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Share the input embedding with the output projection.
    #[arg(long)]
    pub tied: bool,
}

impl SourceArgs {
    pub fn is_inline(&self) -> bool {
        !self.ffn.is_empty() || !self.qkv.is_empty() || self.layers.is_some()
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Print the profiles as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Directory for plan.json and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Directory for count.csv and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Corpus files, concatenated in the order given.
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the step count; warmup is reset to 2% of it.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Fraction of the corpus tail held out for validation.
    #[arg(long, default_value_t = 0.05)]
    pub val_fraction: f64,
    /// Write a validation perplexity chart.
    #[arg(long, overrides_with = "no_svg")]
    pub svg: bool,
    #[arg(long)]
    pub no_svg: bool,
    /// Run with seeds seed, seed+1, ... seed+N-1.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Record throughput and wall-clock columns; metrics are then no longer
    /// byte-reproducible.
    #[arg(long)]
    pub timing: bool,
}

impl RunArgs {
    pub fn svg(&self) -> bool {
        !self.no_svg
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Train the variants concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Relative tolerance of budget equalization.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub val_fraction: f64,
    /// Window length; defaults to the model's maximum.
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, default_value_t = 8192)]
    pub eval_tokens: usize,
    /// Directory for eval.json and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
