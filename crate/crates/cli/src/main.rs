mod commands;
mod data;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "absa", version, about = "Aspect-based sentiment extraction with pointer generation and prompt tuning")]
struct Cli {
    /// Directory that relative dataset paths are resolved against.
    #[arg(long, env = "ABSA_DATA_ROOT", global = true)]
    data_root: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a dataset file to canonical jsonl.
    Import(ImportArgs),
    /// Print sentence and triplet counts.
    Stats(StatsArgs),
    /// Draw a seeded fraction of a split.
    Fewshot(FewshotArgs),
    /// Train a model and keep the best checkpoint by dev Triplet F1.
    Train(TrainArgs),
    /// Write predicted triplets for a dataset.
    Predict(PredictArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Train and evaluate over a grid of templates and seeds.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct ImportArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// jsonl or legacy; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// A split file or a directory of split files.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Debug)]
struct FewshotArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long = "few-shot", default_value_t = 0.1)]
    fraction: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainOptions {
    /// Flat TOML (or json) file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding train/dev/test files, or a single training file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// Train (and dev) on this seeded fraction of the data.
    #[arg(long = "few-shot")]
    few_shot: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Template name from the presets or the catalog.
    #[arg(long)]
    template: Option<String>,
    /// TOML file with extra named templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Replace the pseudo prompt tokens with the fixed manual wording.
    #[arg(long)]
    ablate_prompt_encoder: bool,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    options: TrainOptions,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint directory, or a training output directory with `best/`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value_t = 4)]
    beam_size: usize,
    /// Generation cap; defaults to the value recorded at training time.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// Comma-separated subset of aesc, pair, triplet.
    #[arg(long, default_value = "aesc,pair,triplet")]
    subtasks: String,
    #[arg(long, default_value_t = 4)]
    beam_size: usize,
    #[arg(long)]
    max_len: Option<usize>,
    /// Add scores restricted to sentences with several aspects or opinions.
    #[arg(long)]
    multi_triplet: bool,
    /// Add length- and order-error rates of the generated sequences.
    #[arg(long)]
    invalid_rates: bool,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    options: TrainOptions,
    /// Templates to compare.
    #[arg(long, value_delimiter = ',', default_value = "auto-1,auto-2,auto-3,manual")]
    grid: Vec<String>,
    /// Seeds to average over; defaults to the configured seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let ctx = commands::Context {
        data_root: cli.data_root.clone(),
        argv: std::env::args().collect(),
    };
    let result = match cli.command {
        Command::Import(a) => commands::import(&ctx, &a),
        Command::Stats(a) => commands::stats(&ctx, &a),
        Command::Fewshot(a) => commands::fewshot(&ctx, &a),
        Command::Train(a) => commands::train(&ctx, &a.options).map(|_| ()),
        Command::Predict(a) => commands::predict(&ctx, &a),
        Command::Evaluate(a) => commands::evaluate(&ctx, &a),
        Command::Sweep(a) => commands::sweep(&ctx, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let category = err
                .chain()
                .find_map(|e| e.downcast_ref::<absa_core::Error>())
                .map(absa_core::Error::category)
                .unwrap_or("usage");
            eprintln!("error[{category}]: {err:#}");
            ExitCode::FAILURE
        }
    }
}
