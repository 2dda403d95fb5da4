//! `diffmpm`: runs, checks and benchmarks scenario configurations.
//!
//! Exit codes: 0 success, 1 failed checks or other errors, 2 solver
//! nonconvergence, 3 configuration or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffmpm_core::config::ScenarioConfig;
use diffmpm_core::jacobian::JacobianStrategy;
use diffmpm_core::scenario::{self, RunReport, ScenarioError, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK};

#[derive(Parser)]
#[command(name = "diffmpm", version, about = "Implicit differentiable MPM scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its JSON summary.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set schedule.steps=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a scenario and report each acceptance check; exits 0 iff all pass.
    Check {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run with a fixed Jacobian strategy and print the JSON summary.
    Bench {
        config: PathBuf,
        #[arg(long, value_enum)]
        strategy: Strategy,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Sparse,
    Dense,
}

impl From<Strategy> for JacobianStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Sparse => JacobianStrategy::Sparse,
            Strategy::Dense => JacobianStrategy::Dense,
        }
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, ScenarioError> {
    let cfg = ScenarioConfig::load(path, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32, ScenarioError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let report = scenario::run(&load(&config, &overrides)?)?;
            println!("{}", report.to_json());
            Ok(EXIT_OK)
        }
        Command::Check { config, overrides } => {
            let report = scenario::run(&load(&config, &overrides)?)?;
            Ok(print_checks(&report))
        }
        Command::Bench { config, strategy, overrides } => {
            let report = scenario::bench(&load(&config, &overrides)?, strategy.into())?;
            println!("{}", report.to_json());
            Ok(EXIT_OK)
        }
    }
}

fn print_checks(report: &RunReport) -> i32 {
    println!("{} ({} steps, {:.2} s)", report.scenario, report.steps, report.wall_s);
    for c in &report.checks {
        println!("{}", c.describe());
    }
    for (name, value) in &report.metrics {
        println!("  info  {name} = {value:.6e}");
    }
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    if report.checks.is_empty() {
        eprintln!("error: scenario registered no checks");
        return EXIT_FAILURE;
    }
    println!("{} of {} checks passed", report.checks.len() - failed, report.checks.len());
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage errors share the configuration exit code; clap's own code 2
        // would read as nonconvergence.
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_OK as u8 });
        }
    };
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
