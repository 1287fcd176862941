use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ia1",
    version,
    about = "Cross-lingual alignment instruction tuning at desk scale"
)]
pub struct Cli {
    /// Overrides every seed taken from configs or defaults.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a parallel corpus into an instruction dataset.
    Generate(GenerateArgs),
    /// Sample a replay pool and write an interleaved batch plan.
    Schedule(ScheduleArgs),
    /// Train the tiny model on a batch plan.
    Train(TrainArgs),
    /// Zero-shot multi-prompt evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Run generate, schedule, train, eval and report from one config.
    Pipeline(PipelineArgs),
    /// Re-run a pipeline from its manifest and compare output digests.
    Verify(VerifyArgs),
    /// Per-language deltas against a baseline and smoothed loss curves.
    Report(ReportArgs),
    /// Convert an `input<TAB>target` file of past instruction data.
    ConvertOld(ConvertOldArgs),
    /// Write a small synthetic corpus, eval set and pipeline config.
    Synth(SynthArgs),
    /// Run a built-in desk experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub src_lang: String,
    #[arg(long)]
    pub tgt_lang: String,
    /// Comma-separated task tags: word, span, mt, mono.
    #[arg(long, value_delimiter = ',', default_value = "word,span,mt")]
    pub tasks: Vec<String>,
    /// Template file; the built-in set when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// pivot2new, new2pivot or both.
    #[arg(long, default_value = "pivot2new")]
    pub direction: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterleaveArg {
    Strict,
    Shuffled,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// New instruction dataset.
    #[arg(long)]
    pub new: PathBuf,
    /// Past instruction dataset to replay from.
    #[arg(long)]
    pub old: Option<PathBuf>,
    /// Replay pool size r.
    #[arg(long, alias = "replay", default_value_t = 0)]
    pub replay_size: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value = "strict")]
    pub interleave: InterleaveArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub schedule: PathBuf,
    /// Training config JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Validation datasets, each tagged by its file stem.
    #[arg(long, value_delimiter = ',')]
    pub val: Vec<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init_model: Option<PathBuf>,
    #[arg(long)]
    pub loss_on_prompt: bool,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub curves: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizeArg {
    Sum,
    PerToken,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// TSV with header `text<TAB>label<TAB>lang`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub verbalizers: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "per-token")]
    pub normalize: NormalizeArg,
    /// JSON report; a CSV with the same stem is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the re-run; a fresh directory is required.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub baseline: PathBuf,
    /// Trailing moving-average window for the loss curves.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertOldArgs {
    #[arg(long)]
    pub tsv: PathBuf,
    #[arg(long)]
    pub lang: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub pairs: usize,
    #[arg(long, default_value_t = 300)]
    pub old: usize,
    #[arg(long, default_value_t = 60)]
    pub eval: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Forgetting,
    Ablation,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    /// Experiment config JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}
