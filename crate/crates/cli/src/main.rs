mod commands;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsr::config::{parse_scales, Config, ConfigFile, Overrides};
use dsr::DsrError;

/// Partial person re-identification by sparse reconstruction of deep feature maps.
#[derive(Parser)]
#[command(name = "dsr", version)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sparsity weight of the reconstruction.
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Block scales, e.g. `1,2,3`.
    #[arg(long, global = true, value_parser = scales_arg)]
    scales: Option<Scales>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug)]
struct Scales(Vec<usize>);

fn scales_arg(s: &str) -> Result<Scales, String> {
    parse_scales(s).map(Scales).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write a feature map from an image, an .fmap or a synthetic spec.
    Extract(commands::ExtractArgs),
    /// Rank a gallery store against one probe map.
    Match(commands::MatchArgs),
    /// Identification metrics (CMC, ROC, mAP) over a probe set.
    Eval(commands::EvalArgs),
    /// Optional identification pre-training, then DSR fine-tuning.
    Train(commands::TrainArgs),
    /// Per-probe timing of amortized DSR against per-probe recomputation.
    Bench(commands::BenchArgs),
    /// Solve one l1-regularized least-squares problem from JSON.
    Solve(commands::SolveArgs),
}

fn exit_code(e: &DsrError) -> u8 {
    match e {
        DsrError::Config(_) => 2,
        DsrError::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = || -> dsr::Result<()> {
        let file = cli.config.as_ref().map(ConfigFile::read).transpose()?;
        let overrides = Overrides {
            beta: cli.beta,
            scales: cli.scales.clone().map(|s| s.0),
            workers: cli.workers,
            seed: cli.seed,
        };
        let config = Config::resolve(file.as_ref(), &overrides)?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .map_err(|e| DsrError::Config(format!("worker pool: {e}")))?;
        match &cli.command {
            Command::Extract(a) => commands::extract(&config, a),
            Command::Match(a) => commands::run_match(&config, a),
            Command::Eval(a) => commands::eval(&config, a),
            Command::Train(a) => commands::train(&config, a),
            Command::Bench(a) => commands::bench(&config, a),
            Command::Solve(a) => commands::solve(&config, cli.beta, a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
