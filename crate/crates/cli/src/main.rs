use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ilcf_cli::pipeline::{Pipeline, Stage};
use ilcf_cli::PipelineConfig;

/// Batch forecasting pipeline for rare leadership-change events: builds
/// duration data, fits split-population Weibull models, averages them into a
/// calibrated ensemble, scores every partition, and emits multi-month
/// forecasts.
#[derive(Parser, Debug)]
#[command(name = "ilcf", version)]
struct Args {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Single stage to run: build-spells, build-lags, decompose-variance,
    /// fit, calibrate, evaluate, or forecast. Omit to run the full workflow.
    #[arg(long)]
    stage: Option<String>,

    /// Artifact output directory.
    #[arg(long)]
    out: PathBuf,

    /// Seed recorded in the manifest for any randomized restart.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Parallel model fits in the fit stage.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match PipelineConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create output directory: {e}");
        return ExitCode::FAILURE;
    }
    let pipeline = Pipeline::new(config, &args.out, args.seed, args.jobs);
    let result = match args.stage.as_deref() {
        None | Some("run") => pipeline.run(),
        Some(name) => match Stage::from_name(name) {
            Some(stage) => pipeline.run_stage(stage),
            None => {
                eprintln!(
                    "error: unknown stage `{name}` (expected one of: {})",
                    ilcf_cli::STAGES
                        .iter()
                        .map(|s| s.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                );
                return ExitCode::FAILURE;
            }
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
