//! Command-line driver: runs a configured solve pipeline and exports the
//! artifacts.
//!
//! Exit codes: 0 converged, 2 iteration cap reached, 3 numerical abort,
//! 1 configuration or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sobec::config::{RunConfig, SpectralConfig};
use sobec::pipeline::{self, RunStatus};

#[derive(Parser)]
#[command(
    name = "sobec",
    version,
    about = "Ground states of spin-orbit coupled two-component condensates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solve pipeline from a TOML config.
    Solve {
        /// Path to the run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config; default `./run_out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stage override, e.g. `A1:1e-4,A2:1e-4,J2:1e-12`.
        #[arg(long)]
        stages: Option<String>,
        /// Compute the spectral report at the converged state.
        #[arg(long)]
        spectral: bool,
    },
}

fn main() -> ExitCode {
    let threads = std::env::var("SOBEC_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1);
    sobec::linsolve::set_num_threads(threads);

    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            config,
            out,
            stages,
            spectral,
        } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Some(spec) = stages {
                cfg.stages = match RunConfig::parse_stage_override(&spec) {
                    Ok(st) => st,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                };
                if let Err(e) = cfg.validate() {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
            if spectral && cfg.spectral.is_none() {
                cfg.spectral = Some(SpectralConfig::default());
            }
            let out_dir = out
                .or_else(|| cfg.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("run_out"));

            let artifacts = match pipeline::run_pipeline(&cfg) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = pipeline::export_outputs(&artifacts, &out_dir) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }

            println!(
                "status: {:?}  E = {:.16e}  lambda = {:.16e}  iterations: {:?}",
                artifacts.status,
                artifacts.final_energy,
                artifacts.final_lambda,
                artifacts.stage_iterations
            );
            println!("artifacts written to {}", out_dir.display());
            match artifacts.status {
                RunStatus::Converged => ExitCode::SUCCESS,
                RunStatus::IterationCap => ExitCode::from(2),
                RunStatus::Aborted { .. } => ExitCode::from(3),
            }
        }
    }
}
