use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rps_core::harness::{run_experiment, to_csv, Experiment, ExperimentConfig, RunReport};
use rps_core::{selftest, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "sampler", version, about = "Proximal sampling on Riemannian manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a `key = value` config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when neither this nor `out` in the config is set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate truncated heat kernels on S^d with their tail bounds.
    KernelTable {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Selftest,
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_config() || matches!(e, Error::Io { .. }) {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_NUMERICAL)
    }
}

fn finish(cfg: &ExperimentConfig, report: &RunReport) -> ExitCode {
    if cfg.out_path.is_none() {
        print!("{}", to_csv(&report.rows));
    }
    eprintln!(
        "{}: {} rows, {} failed chains, {} diverged Langevin chains, {} warnings, {} clipped, {} kernel clamps",
        cfg.experiment.name(),
        report.rows.len(),
        report.failed_chains,
        report.diverged_chains,
        report.warnings,
        report.clipped,
        report.clamp_events
    );
    if report.failed_chains > 0 {
        ExitCode::from(EXIT_NUMERICAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(cfg: ExperimentConfig) -> ExitCode {
    match run_experiment(&cfg) {
        Ok(report) => finish(&cfg, &report),
        Err(e) => exit_for(&e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let mut cfg = match ExperimentConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => return exit_for(&e),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.out_path = out;
            }
            execute(cfg)
        }
        Command::KernelTable { dim, t, levels, out } => {
            let cfg = ExperimentConfig {
                kernel_t: t,
                levels,
                out_path: out,
                ..ExperimentConfig::preset(Experiment::KernelTable, Some(dim))
            };
            execute(cfg)
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}
