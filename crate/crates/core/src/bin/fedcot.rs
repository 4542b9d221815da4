//! Command-line front end for the federated discrimination engine.
//!
//! Verbosity is controlled by the `FEDCOT_LOG` environment variable
//! (`error`, `warn`, `info`, `debug`, `trace`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedcot::cli::{
    cmd_compare_aggregation, cmd_evaluate, cmd_generate_synthetic, cmd_simulate, config,
    parse_config, RunConfig,
};

#[derive(Parser)]
#[command(name = "fedcot", version, about = "Federated chain-of-thought discrimination engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Stacking,
    Naive,
}

#[derive(Parser)]
struct CommonArgs {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the aggregation mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the federation and write metrics.csv, report.json, and a checkpoint.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from a previously written checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run stacking and naive aggregation from identical seeds, side by side.
    CompareAggregation {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Emit the synthetic federation as JSONL corpus files.
    GenerateSynthetic {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a checkpointed global discriminator against JSONL corpora.
    Evaluate {
        /// Checkpoint written by `simulate`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL corpus files to score (repeatable).
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        /// Directory for evaluation.json; prints to the log when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &CommonArgs) -> fedcot::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(mode) = common.mode {
        cfg.aggregation = match mode {
            ModeArg::Stacking => config::Aggregation::Stacking,
            ModeArg::Naive => config::Aggregation::Naive,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> fedcot::Result<()> {
    match cli.command {
        Command::Simulate { common, resume } => {
            let cfg = load_config(&common)?;
            let artifacts = cmd_simulate(&cfg, resume.as_deref())?;
            println!("metrics: {}", artifacts.metrics_csv.display());
            println!("report: {}", artifacts.report_json.display());
            println!("checkpoint: {}", artifacts.checkpoint.display());
        }
        Command::CompareAggregation { common } => {
            let cfg = load_config(&common)?;
            let report = cmd_compare_aggregation(&cfg)?;
            println!(
                "stacking final mean accuracy: {:.4}",
                report.stacking.final_mean_accuracy
            );
            match (&report.naive, &report.naive_error) {
                (Some(naive), _) => {
                    println!("naive final mean accuracy: {:.4}", naive.final_mean_accuracy);
                    for (round, norm) in naive.per_round_noise_norm.iter().enumerate() {
                        println!("round {}: naive noise |N|_F = {:.6}", round + 1, norm);
                    }
                }
                (None, Some(err)) => println!("naive arm failed: {err}"),
                (None, None) => unreachable!("naive arm either ran or errored"),
            }
        }
        Command::GenerateSynthetic { common } => {
            let cfg = load_config(&common)?;
            for path in cmd_generate_synthetic(&cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Evaluate {
            checkpoint,
            corpora,
            out,
        } => {
            for (name, metrics) in cmd_evaluate(&checkpoint, &corpora, out.as_deref())? {
                println!(
                    "{name}: accuracy {:.4} p@1 {:.4} p@k {:.4} delta {:.4} majority {:.4} (n={})",
                    metrics.accuracy,
                    metrics.p_at_1,
                    metrics.p_at_k,
                    metrics.delta,
                    metrics.majority_vote_accuracy,
                    metrics.n_questions
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDCOT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
