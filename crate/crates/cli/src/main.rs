//! `signtune`: prompts, manifests, training, ensembling and evaluation
//! for cross-region traffic sign classifiers.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use signtune_core::ErrorKind;

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(signtune_core::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<signtune_core::Error> for CliError {
    fn from(e: signtune_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// Usage errors (2) are reported by the argument parser itself.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 3,
                ErrorKind::Data | ErrorKind::Io => 4,
                ErrorKind::Numeric => 5,
            },
        }
    }
}

const STRATEGIES: [&str; 5] = ["zero_shot", "linear_probe", "full_ft", "wise_ft", "adwe"];
const LOSS_MODES: [&str; 2] = ["contrastive", "cross_entropy"];
const OPTIMIZERS: [&str; 2] = ["sgd", "adam"];
const PROMPT_MODES: [&str; 4] = ["plain", "scenario_only", "rules_only", "combined"];

#[derive(Debug, Parser)]
#[command(name = "signtune", version, about = "Cross-region traffic sign fine-tuning workflow")]
struct Cli {
    /// Run configuration file (TOML); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root under which timestamped run directories are created.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the prompt template set.
    GenPrompts(GenPromptsArgs),
    /// Scan source directories into a manifest.
    BuildManifest(BuildManifestArgs),
    /// Render the synthetic regional-shift dataset.
    SynthData(SynthArgs),
    /// Fine-tune with one strategy.
    Train(TrainArgs),
    /// Interpolate a zero-shot and a fine-tuned checkpoint.
    Ensemble(EnsembleArgs),
    /// Write the zero-shot anchor checkpoint, optionally scoring it.
    ZeroShot(ZeroShotArgs),
    /// Score a checkpoint on the held-out regions.
    Evaluate(EvaluateArgs),
    /// Render saved reports as one table.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct PromptArgs {
    /// Existing prompt set (JSON lines); generated from the taxonomy otherwise.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long, value_parser = PROMPT_MODES)]
    pub mode: Option<String>,
    /// Keep only the first N taxonomy classes.
    #[arg(long)]
    pub n_classes: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Directory holding manifest.jsonl and provenance.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Region used for training (repeatable); all others are test regions.
    #[arg(long = "train-region")]
    pub train_regions: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenPromptsArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long, default_value = "prompts.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildManifestArgs {
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// `SOURCE_ID=DIR`, repeatable.
    #[arg(long = "source", required = true)]
    pub sources: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Taxonomy size for the coverage table.
    #[arg(long, default_value_t = signtune_core::prompts::CANONICAL_CLASSES)]
    pub n_classes: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub n_regions: Option<usize>,
    #[arg(long)]
    pub per: Option<usize>,
    #[arg(long)]
    pub shift: Option<f64>,
    /// Parent directory; data goes to `<out>/synthetic-seed<seed>`.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = STRATEGIES)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub clamp_lo: Option<f64>,
    #[arg(long)]
    pub clamp_hi: Option<f64>,
    #[arg(long, value_parser = LOSS_MODES)]
    pub loss_mode: Option<String>,
    #[arg(long, value_parser = OPTIMIZERS)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Finished full fine-tuning checkpoint, required by `wise_ft`.
    #[arg(long)]
    pub ft_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Zero-shot anchor checkpoint directory.
    #[arg(long)]
    pub zs: PathBuf,
    /// Fine-tuned checkpoint directory.
    #[arg(long)]
    pub ft: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Report to compute the delta against.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Also write image embeddings of the test split.
    #[arg(long)]
    pub export_embeddings: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `report.json` files, one table row each.
    #[arg(long = "report", required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    match cli.command {
        Command::GenPrompts(args) => commands::gen_prompts(cfg, args),
        Command::BuildManifest(args) => commands::build_manifest(cfg, args),
        Command::SynthData(args) => commands::synth_data(cfg, args),
        Command::Train(args) => commands::train(cfg, args),
        Command::Ensemble(args) => commands::ensemble(cfg, args),
        Command::ZeroShot(args) => commands::zero_shot(cfg, args),
        Command::Evaluate(args) => commands::evaluate(cfg, args),
        Command::Report(args) => commands::report(cfg, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
