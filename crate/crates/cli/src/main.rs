//! `synfault`: generate synthetic bearing-fault datasets from healthy
//! recordings, preprocess them into envelope spectra, train adversarial
//! domain-adaptation models and evaluate them.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use synfault::adapt::Method;
use synfault::siggen::FaultClass;

#[derive(Parser)]
#[command(name = "synfault", version, about = "Synthetic-to-real bearing fault diagnosis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate source/target dataset containers from healthy recordings.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override samples per class.
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert a segment container into envelope-spectrum model inputs.
    Preprocess {
        /// Container base path (without extension).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the spectra as a CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a diagnosis model on source/target containers.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Source container base (default: <output>/source).
        #[arg(long)]
        source: Option<PathBuf>,
        /// Target container base (default: <output>/target).
        #[arg(long)]
        target: Option<PathBuf>,
        /// source-only | dann | conditional | proposed.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a labeled container.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the confusion matrix as CSV instead of printing it.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Repeat train/eval across balance levels, methods and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Comma-separated balance percentages for the swept fault class.
        #[arg(long, default_value = "20,15,10,5,1")]
        levels: String,
        /// Repetitions per cell (mean is reported).
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Comma-separated method list.
        #[arg(long, default_value = "dann,conditional,proposed")]
        methods: String,
        /// Fault class whose sample count is swept.
        #[arg(long, default_value = "rolling_element")]
        fault: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    per_class: Option<usize>,
    output: Option<PathBuf>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = per_class {
        cfg.segmentation.per_class = p;
    }
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn container_base(explicit: Option<PathBuf>, cfg: &RunConfig, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| cfg.output.join(name))
}

fn main() -> Result<()> {
    let command_line: Vec<String> = std::env::args().collect();
    let command_line = command_line.join(" ");
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, seed, per_class, output } => {
            let cfg = load_config(&config, seed, per_class, output)?;
            commands::generate(&cfg, &command_line)
        }
        Command::Preprocess { input, output, csv } => {
            commands::preprocess(&input, &output, csv.as_deref())
        }
        Command::Train { config, source, target, method, epochs, seed, output } => {
            let mut cfg = load_config(&config, seed, None, output)?;
            if let Some(m) = method {
                cfg.train.method = Some(m);
            }
            if let Some(e) = epochs {
                cfg.train.epochs = Some(e);
            }
            let source = container_base(source, &cfg, "source");
            let target = container_base(target, &cfg, "target");
            commands::train(&cfg, &source, &target, &command_line)
        }
        Command::Eval { checkpoint, data, table } => {
            commands::eval(&checkpoint, &data, table.as_deref())
        }
        Command::Sweep { config, source, target, levels, seeds, methods, fault, seed, output } => {
            let cfg = load_config(&config, seed, None, output)?;
            let source = container_base(source, &cfg, "source");
            let target = container_base(target, &cfg, "target");
            let levels_percent = levels
                .split(',')
                .map(|s| s.trim().parse::<f64>().context("parsing --levels"))
                .collect::<Result<Vec<f64>>>()?;
            let methods = methods
                .split(',')
                .map(|s| Ok(Method::parse(s.trim())?))
                .collect::<Result<Vec<Method>>>()?;
            let args = commands::SweepArgs {
                levels_percent,
                seeds,
                methods,
                fault: FaultClass::parse(&fault)?,
            };
            commands::sweep(&cfg, &source, &target, &args, &command_line)
        }
    }
}
