use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lpv_subnet::harness::{cmd_evaluate, cmd_export_plotdata, cmd_generate, cmd_train, ExperimentConfig, RunOptions};
use lpv_subnet::lpv::SchedulingMode;
use lpv_subnet::Result;

#[derive(Parser)]
#[command(name = "lpvsubnet", version, about = "Identify LPV state-space models with learned scheduling")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Scheduling mode: self, external or oracle.
    #[arg(long, global = true)]
    mode: Option<SchedulingMode>,

    /// Worker threads for batch rollouts; 1 is bit-reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate estimation, validation and test data.
    Generate,
    /// Train a model on the generated data.
    Train,
    /// Simulate a model on a data file and report the fit.
    Evaluate {
        /// Model document (default: the trained model).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Data file (default: the test record).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Convert history and prediction tables to long format.
    ExportPlotdata {
        /// Input tables (default: history.csv and predictions.csv).
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| lpv_subnet::Error::InvalidArgument("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads == 0 {
        return Err(lpv_subnet::Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let opts = RunOptions {
        threads: cli.threads,
        mode: cli.mode,
    };
    match cli.command {
        Command::Generate => {
            let report = cmd_generate(&cfg)?;
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            println!("sigma_e {}", report.sigma_e);
        }
        Command::Train => {
            let report = cmd_train(&cfg, &opts)?;
            println!("wrote {}", report.model.display());
            println!("wrote {}", report.history.display());
            println!(
                "updates {} (skipped {}{}), best at update {}",
                report.updates,
                report.skipped,
                if report.stopped_early { ", stopped early" } else { "" },
                report.best.update
            );
            println!("validation BFR {:.2}%", report.best.bfr);
        }
        Command::Evaluate { model, data } => {
            let report = cmd_evaluate(&cfg, &opts, model.as_deref(), data.as_deref())?;
            println!("wrote {}", report.predictions.display());
            println!("mode {}", report.mode);
            println!("BFR {:.2}%", report.fit.bfr);
            println!("RMS {}", report.fit.rms);
            if let Some(c) = report.fit.noise_ceiling_bfr {
                println!("noise ceiling BFR {c:.2}%");
            }
        }
        Command::ExportPlotdata { inputs, out } => {
            let (path, rows) = cmd_export_plotdata(&cfg, &inputs, out.as_deref())?;
            println!("wrote {} ({rows} rows)", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
