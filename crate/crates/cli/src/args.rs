use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "curdpo",
    version,
    about = "Curriculum-guided DPO for hallucination detection"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags every subcommand accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key=value training config; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory receiving outputs and manifest.json.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every example's hallucinated answer for grounding.
    Score(ScoreArgs),
    /// Filter, stage and train a policy.
    Train(TrainArgs),
    /// Judge a corpus with a trained model.
    Eval(EvalArgs),
    /// Train and evaluate a grid of (policy, range, seed) cells.
    Ablate(AblateArgs),
    /// Grounding-score statistics per difficulty tier.
    Stats(StatsArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerChoice {
    Proxy,
    FileBacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "proxy")]
    pub scorer: ScorerChoice,
    /// `{id, p}` lines for the file-backed scorer.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
}

/// Options shared by `train` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct TrainingFlags {
    /// Score sidecar; the lexical proxy is used when absent and the corpus carries no scores.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Number of curriculum stages.
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
    /// equal_count or equal_width.
    #[arg(long, default_value = "equal_count")]
    pub binning: String,
    /// answer, label or both.
    #[arg(long, default_value = "both")]
    pub pair_mode: String,
    /// Base hyperparameters (`desk` or `paper`) applied before the config file is applied.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs_per_stage: Option<usize>,
    #[arg(long)]
    pub total_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub grad_accum_steps: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub ff: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Score range preset (r00-75, r25-100, r25-75, r00-100) or `lo:hi`.
    #[arg(long, default_value = "r25-100")]
    pub range: String,
    /// curriculum or random.
    #[arg(long, default_value = "curriculum")]
    pub policy: String,
    /// Which part of the hash split to train on.
    #[arg(long, value_enum, default_value = "all")]
    pub split: Split,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Template used to ask for a verdict.
    #[arg(long, default_value = "label_preference")]
    pub template: String,
    /// Judge both answers of every example instead of the labelled candidate.
    #[arg(long)]
    pub both_answers: bool,
    #[arg(long, value_enum, default_value = "all")]
    pub split: Split,
    /// Score sidecar used to derive tiers when the corpus has none.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Grid file: one `policy range seed` cell per line.
    #[arg(long, conflicts_with_all = ["policies", "ranges", "seeds"])]
    pub grid: Option<PathBuf>,
    /// Comma-separated policies for a Cartesian grid.
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<String>,
    /// Comma-separated ranges for a Cartesian grid.
    #[arg(long, value_delimiter = ',')]
    pub ranges: Vec<String>,
    /// Comma-separated seeds for a Cartesian grid.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Score with the lexical proxy when no sidecar is given.
    #[arg(long)]
    pub proxy: bool,
    /// Alternative negatives to compare side by side.
    #[arg(long)]
    pub alt_corpus: Option<PathBuf>,
    #[arg(long, requires = "alt_corpus")]
    pub alt_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Output file name inside `--out`.
    #[arg(long, default_value = "corpus.jsonl")]
    pub name: String,
}
