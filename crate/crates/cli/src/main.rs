//! `mframe`: runs moving-frame SPDE experiments from JSON configurations.
//!
//! Exit codes: 0 pass, 1 test failure, 2 configuration error,
//! 3 overflow or runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moving_frame::experiment::{config_schema, run_file, run_suite, RunOptions, RunOutcome, EXIT_CONFIG, EXIT_RUNTIME};

#[derive(Debug, Parser)]
#[command(name = "mframe", version, about = "Moving-frame simulation and property tests for semilinear SPDEs")]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Replaces the master seed of every configuration.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Also write wall-clock timing to `timing.json`.
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs one configuration file.
    Run { config: PathBuf },
    /// Runs every `*.json` in a directory in filename order.
    Suite { dir: PathBuf },
    /// Prints the JSON schema of configuration files.
    PrintSchema,
}

fn report(outcome: &RunOutcome) {
    let status = match (outcome.pass, outcome.exit_code) {
        (true, _) => "PASS",
        (false, 1) => "FAIL",
        (false, 2) => "CONFIG ERROR",
        _ => "RUNTIME ERROR",
    };
    let kind = outcome
        .kind
        .and_then(|k| serde_json::to_value(k).ok())
        .and_then(|v| v.as_str().map(|s| format!(" ({s})")))
        .unwrap_or_default();
    println!("{status} {}{kind}", outcome.name);
    for e in &outcome.errors {
        eprintln!("  {}: {e}", outcome.name);
    }
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code.clamp(0, 255) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = RunOptions { out_dir: cli.out.clone(), seed_override: cli.seed_override, timing: cli.timing };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("--workers must be >= 1");
            return exit(EXIT_CONFIG);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return exit(EXIT_RUNTIME);
        }
    };
    pool.install(|| match &cli.command {
        Command::PrintSchema => {
            println!("{}", serde_json::to_string_pretty(&config_schema()).expect("schema serializes"));
            exit(0)
        }
        Command::Run { config } => {
            let outcome = run_file(config, &opts);
            report(&outcome);
            exit(outcome.exit_code)
        }
        Command::Suite { dir } => match run_suite(dir, &opts) {
            Ok(suite) => {
                for entry in &suite.entries {
                    report(&entry.outcome);
                }
                println!("{} of {} passed", suite.passed, suite.total);
                exit(suite.exit_code)
            }
            Err(e) => {
                eprintln!("{e}");
                exit(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
            }
        },
    })
}
