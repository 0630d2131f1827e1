mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gazehoi::evaluation::EvalMode;

use config::{parse_axis, RunConfig, Split};
use error::CliError;

/// Train and evaluate gaze-conditioned video HOI models on synthetic data.
#[derive(Parser)]
#[command(name = "gazehoi", version)]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Anticipation gap in keyframes.
    #[arg(long)]
    tau_a: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Detection,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with annotations, vocabulary and features.
    GenData {
        /// Vocabulary JSON; the built-in one otherwise.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train a model and write checkpoints plus a JSON-lines log.
    Train(DataArgs),
    /// Score a checkpoint and write a metrics report.
    Eval {
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Person-wise metrics over a range of confidence thresholds.
    Sweep {
        #[command(flatten)]
        score: ScoreArgs,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Train and score one model per point of an axis grid.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// `name=v1,v2,...`; repeat for a multi-axis grid.
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
}

fn apply_data(cfg: &mut RunConfig, args: &DataArgs) {
    if let Some(d) = &args.data {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(t) = args.tau_a {
        cfg.task.tau_a = t;
    }
}

fn apply_score(cfg: &mut RunConfig, args: &ScoreArgs) {
    apply_data(cfg, &args.data);
    if let Some(s) = args.split {
        cfg.data.split = s;
    }
    if let Some(m) = args.mode {
        cfg.eval.mode = match m {
            Mode::Oracle => EvalMode::Oracle,
            Mode::Detection => EvalMode::Detection,
        };
    }
    if let Some(k) = args.k {
        cfg.eval.k = k;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (mut cfg, model_pinned) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let pinned = text
                .parse::<toml::Table>()
                .map(|t| t.contains_key("model"))
                .unwrap_or(false);
            (RunConfig::parse(&text)?, pinned)
        }
        None => (RunConfig::default(), false),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::GenData { vocab } => {
            cfg.normalize();
            commands::gen_data(&cfg, vocab.as_deref(), &cli.out)
        }
        Command::Train(args) => {
            apply_data(&mut cfg, &args);
            cfg.normalize();
            commands::train_cmd(&cfg, &cli.out)
        }
        Command::Eval { score, threshold } => {
            apply_score(&mut cfg, &score);
            if let Some(t) = threshold {
                cfg.eval.threshold = t;
            }
            cfg.normalize();
            commands::eval_cmd(&mut cfg, &score.checkpoint, model_pinned, &cli.out)
        }
        Command::Sweep { score, thresholds } => {
            apply_score(&mut cfg, &score);
            if let Some(t) = thresholds {
                cfg.eval.thresholds = t;
            }
            cfg.normalize();
            commands::sweep_cmd(&mut cfg, &score.checkpoint, model_pinned, &cli.out)
        }
        Command::Ablate { data, axes } => {
            apply_data(&mut cfg, &data);
            if !axes.is_empty() {
                cfg.ablate.axes = axes.iter().map(|a| parse_axis(a)).collect::<Result<_, _>>()?;
            }
            cfg.normalize();
            commands::ablate_cmd(&cfg, &cli.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
