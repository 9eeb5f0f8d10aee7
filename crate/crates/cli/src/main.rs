mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use compromise_core::Error;

#[derive(Parser)]
#[command(
    name = "compromise",
    version,
    about = "Generate, select and evaluate empathically neutral compromises"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run config and print it with every default filled in.
    ValidateConfig { config: PathBuf },
    /// Run pipeline stages from a config (all of them by default).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only these stages, in the order given.
        #[arg(long = "stage")]
        stages: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate the compromise pool for every view pair.
    Generate(StageArgs),
    /// Score every generated compromise against both views.
    Score(StageArgs),
    /// Keep the k most neutral candidates per pair.
    Select(StageArgs),
    /// Human study: plan, simulate, serve and report.
    Study {
        #[command(subcommand)]
        command: StudyCommand,
    },
    /// One significance test on study ratings.
    Stats(StatsArgs),
    /// Fit the empathic-similarity scorer on rated story pairs.
    TrainScorer(TrainScorerArgs),
    /// Supervised fine-tuning of the built-in tiny language model.
    Sft(SftArgs),
    /// Preference alignment of a tiny-model checkpoint.
    Align(AlignArgs),
    /// Evaluation reports.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(clap::Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Assign raters to perspectives and pairs.
    Plan(StageArgs),
    /// Write synthetic ratings for the plan.
    Simulate(StageArgs),
    /// Serve the rater API over the plan in the run directory.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Preference table from a plan and a rating log.
    Report {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        ratings: PathBuf,
        /// Count fully rated items of raters who did not finish.
        #[arg(long)]
        include_incomplete: bool,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Bootstrap,
    Wilcoxon,
    Permutation,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    method: String,
    #[arg(long, default_value = "single_prompt")]
    baseline: String,
    #[arg(long, value_enum)]
    test: TestKind,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Per-rater aggregate for the signed-rank test.
    #[arg(long, default_value = "mean_rating", value_parser = ["mean_rating", "first_pref_count"])]
    aggregate: String,
    /// Enumerate all sign flips instead of sampling (permutation test only).
    #[arg(long)]
    exhaustive: bool,
    #[arg(long)]
    include_incomplete: bool,
}

#[derive(clap::Args)]
struct TrainScorerArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    rating_min: f64,
    #[arg(long, default_value_t = 1.0)]
    rating_max: f64,
    #[arg(long, default_value = "0.75,0.05,0.20")]
    split: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 4096)]
    input_dim: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value = "spearman", value_parser = ["spearman", "mse"])]
    validation_metric: String,
}

#[derive(clap::Args)]
struct SftArgs {
    /// JSONL records with `prompt` and `target`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Extra texts (one per line) whose words join a fresh model's vocabulary.
    #[arg(long)]
    vocab_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-5)]
    lr: f64,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
}

#[derive(clap::Args)]
struct AlignArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSONL records with `prompt` and `target`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Take hyperparameters from the `[align]` section of a run config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["nce", "task"])]
    loss: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    trainable_layers: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Hypothesis sampling temperature; 0 decodes greedily.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 4)]
    max_tokens: usize,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// ROUGE of system outputs against references (one text per line).
    Rouge {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, default_value = "rouge-l")]
        kind: String,
    },
    /// Neutrality-gap distributions of several systems.
    Neutrality {
        /// `name=path` with one output per line, aligned with the pairs file.
        #[arg(long = "system", required = true)]
        systems: Vec<String>,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 100)]
        sample: usize,
        #[arg(long)]
        seed: u64,
        /// Scorer checkpoint; the hashing encoder is used when absent.
        #[arg(long)]
        scorer: Option<PathBuf>,
        /// Directory for the gap table and box plot.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Mean per-token log-likelihood of a checkpoint on a corpus.
    Forgetting {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Best-of-k sampling from a checkpoint, one output per prompt.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// One prompt per line.
        #[arg(long)]
        prompts: PathBuf,
        /// References for choosing among samples (ROUGE-L).
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 24)]
        max_tokens: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
