use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use premix::commands::{cmd_al, cmd_eval, cmd_finetune, cmd_pretrain, cmd_synth, StrategyChoice};
use premix::config::RunConfig;
use premix::dataset::Split;

#[derive(Parser)]
#[command(name = "premix", version, about = "Feature-bag pre-training, fine-tuning, and active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints, metrics, and histories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pre-training of the aggregator.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Supervised fine-tuning on the labeled pool split.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        /// Initialize from this checkpoint instead of from scratch.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Budgeted selection loop; `--strategy all` sweeps every function.
    Al {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::builder::ValueParser::new(parse_strategy))]
        strategy: Option<StrategyChoice>,
    },
    /// Accuracy of a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn parse_strategy(s: &str) -> Result<StrategyChoice, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn load(common: &Common) -> premix::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn run() -> premix::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { common } => {
            let cfg = load(&common)?;
            let out = if common.out == PathBuf::from("runs") { None } else { Some(common.out.as_path()) };
            let summary = cmd_synth(&cfg, out)?;
            let total: usize = summary.counts.iter().map(|(_, n)| n).sum();
            println!("wrote {total} bags to {}", summary.dir.display());
            for (split, n) in summary.counts {
                println!("  {:<9} {n}", split.as_str());
            }
        }
        Command::Pretrain { common, epochs } => {
            let mut cfg = load(&common)?;
            if let Some(e) = epochs {
                cfg.pretrain.epochs = e;
            }
            cfg.validate()?;
            let artifacts = cmd_pretrain(&cfg, &common.out)?;
            println!(
                "pre-training done: loss {:.4} -> {:.4}",
                artifacts.first_epoch_loss, artifacts.final_epoch_loss
            );
            println!("checkpoint: {}", artifacts.checkpoint.display());
            println!("metrics:    {}", artifacts.metrics.display());
        }
        Command::Finetune { common, epochs, init } => {
            let mut cfg = load(&common)?;
            if let Some(e) = epochs {
                cfg.finetune.epochs = e;
            }
            cfg.validate()?;
            let artifacts = cmd_finetune(&cfg, &common.out, init.as_deref())?;
            println!("fine-tuning done: test accuracy {:.4}", artifacts.final_accuracy);
            println!("checkpoint: {}", artifacts.checkpoint.display());
            println!("metrics:    {}", artifacts.metrics.display());
        }
        Command::Al { common, strategy } => {
            let cfg = load(&common)?;
            let records = cmd_al(&cfg, &common.out, strategy)?;
            for r in &records {
                println!(
                    "{:<9} iter {} labels {:>4} accuracy {:.4}",
                    r.strategy.as_str(),
                    r.iter,
                    r.labeled_count,
                    r.test_accuracy
                );
            }
            println!("history: {}", common.out.join("al_history.jsonl").display());
        }
        Command::Eval { common, checkpoint, split } => {
            let cfg = load(&common)?;
            let split: Split = split.parse()?;
            let accuracy = cmd_eval(&cfg, &checkpoint, split)?;
            println!("accuracy on {}: {accuracy:.4}", split.as_str());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
