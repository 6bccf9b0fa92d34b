use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use momentum_ct::config::ExperimentConfig;
use momentum_ct::experiment;
use momentum_ct::nn::Variant;
use momentum_ct::{Error, ErrorClass};

/// Momentum-Net low-dose CT reconstruction experiments.
#[derive(Parser)]
#[command(name = "momentum-ct", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantoms, low-dose sinograms and FBP inputs into the dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one denoiser per layer and write layer checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Reconstruct a dataset's test split or a single sinogram file.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Reference image for tracing a single-sinogram input.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Summarise traces into metrics and curve CSVs plus PNG panels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Config) => EXIT_CONFIG,
        Some(ErrorClass::Numerical) => EXIT_NUMERICAL,
        Some(ErrorClass::Data) | None => EXIT_DATA,
    }
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg = load_config(&config)?;
            let ds = experiment::simulate(&cfg)?;
            println!(
                "simulated {} members into {}",
                ds.manifest.members.len(),
                ds.root.display()
            );
        }
        Command::Train { config, variant } => {
            let mut cfg = load_config(&config)?;
            if let Some(v) = variant {
                let v: Variant = v.parse()?;
                cfg = cfg.with_variant(v);
            }
            let report = experiment::train(&cfg)?;
            println!(
                "trained {} layers into {}",
                report.final_loss.len(),
                report.checkpoints.display()
            );
        }
        Command::Reconstruct {
            config,
            checkpoints,
            input,
            reference,
        } => {
            let cfg = load_config(&config)?;
            if !input.exists() {
                return Err(Error::Config(format!("input {} does not exist", input.display())).into());
            }
            let report = experiment::reconstruct(&cfg, &checkpoints, &input, reference.as_deref())
                .with_context(|| format!("reconstructing {}", input.display()))?;
            println!(
                "wrote {} images under {}",
                report.images.len(),
                report.method_dir.display()
            );
        }
        Command::Evaluate { run } => {
            let summary = experiment::evaluate(&run)?;
            for row in &summary.metrics {
                println!(
                    "{:<14} {:>9.2} ± {:>7.2} HU  (n = {})",
                    row.method, row.mean_rmse_hu, row.std_rmse_hu, row.n
                );
            }
            for note in &summary.missing {
                eprintln!("missing: {note}");
            }
            if !summary.missing.is_empty() {
                return Err(Error::Data(format!("{} traces missing; summary is partial", summary.missing.len())).into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
