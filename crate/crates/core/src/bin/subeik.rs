use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use subeik::pipeline::{check_config, output_root, run, RunOptions};
use subeik::scenario::{builtin_scenarios, lookup, Scenario};

#[derive(Parser)]
#[command(name = "subeik", version, about = "Minimum time functions of Hörmander systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in scenario, `all` of them, or a JSON config file.
    Run {
        scenario: String,
        /// Base grid resolution; the run also solves at 2m - 1.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (default: $SUBEIK_OUT, then ./subeik-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenarios run concurrently with `all`.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List the built-in scenarios.
    List,
    /// Validate a scenario config without running it.
    Check { config: PathBuf },
}

fn resolve(name: &str) -> subeik::Result<Vec<Scenario>> {
    if name == "all" {
        return Ok(builtin_scenarios());
    }
    if name.ends_with(".json") {
        return Ok(vec![check_config(name.as_ref())?]);
    }
    Ok(vec![lookup(name)?])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for s in builtin_scenarios() {
                println!("{:<18} {}", s.name, s.description);
            }
            ExitCode::SUCCESS
        }
        Command::Check { config } => match check_config(&config) {
            Ok(s) => {
                println!(
                    "{}: {} fields on R^{}, grid {}, {} expected records",
                    s.name,
                    s.system.len(),
                    s.system.dim(),
                    s.grid,
                    s.expected.len()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { scenario, grid, seed, out, jobs } => {
            let scenarios = match resolve(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let opts = RunOptions {
                grid,
                seed,
                out: Some(output_root(out.as_deref())),
            };
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let reports: Vec<_> =
                pool.install(|| scenarios.par_iter().map(|s| run(s, &opts).report).collect());
            for r in &reports {
                print!("{}", r.summary());
            }
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
