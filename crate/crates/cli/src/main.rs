use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hqo_cli::{apply_overrides, run_experiment, Command, ExperimentConfig, Overrides};

/// Numerical laboratory for a hierarchical model of quantum anharmonic oscillators.
///
/// Exit codes: 0 success, 1 configuration or I/O error, 2 invariant violation,
/// 3 infeasible parameters. Overrides: flag > HQO_SEED / HQO_THREADS / HQO_OUT > file.
#[derive(Debug, Parser)]
#[command(name = "hqo", version)]
struct Cli {
    /// TOML experiment file; the shipped default is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default_config()),
    };
    let flags = Overrides { seed: cli.seed, threads: cli.threads, out: cli.out.clone() };
    let cfg = cfg.and_then(|c| apply_overrides(c, &flags, |k| std::env::var(k).ok()));
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hqo: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_toml_string());
        return ExitCode::SUCCESS;
    }
    match run_experiment(cli.command, &cfg) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            match &out.status {
                hqo_cli::Status::Ok => {}
                hqo_cli::Status::Violation(v) => {
                    for name in v {
                        eprintln!("hqo: invariant violated: {name}");
                    }
                }
                hqo_cli::Status::Infeasible(msg) => eprintln!("hqo: infeasible: {msg}"),
            }
            ExitCode::from(out.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("hqo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
