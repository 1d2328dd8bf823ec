use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvsde_cli::{describe, run, CliError, Experiment, RunConfig};

/// Simulate and verify measure-valued stochastic equations on dyadic partitions.
///
/// Exit codes: 0 success, 1 I/O, 2 config, 3 numerical abort, 4 a check failed.
#[derive(Parser)]
#[command(name = "mvsde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named scenario from the regression suite, used when the config sets none.
    #[arg(long, global = true)]
    scenario: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    Simulate,
    Density,
    RefineConsistency,
    Converge,
    VerifyInequalities,
    IbpCheck,
    MartingaleTest,
    /// Run the experiment named in the config.
    Run,
    /// Print the resolved plan without simulating.
    Describe {
        #[arg(value_enum)]
        experiment: Option<Experiment>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml("")?,
    };
    if config.scenario.is_none() {
        config.scenario = common.scenario.clone();
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(n) = common.paths {
        config.n_paths = n;
    }
    if let Some(o) = &common.out {
        config.out = o.clone();
    }
    if let Some(t) = common.threads {
        config.threads = t;
    }
    Ok(config)
}

fn from_config(config: &RunConfig) -> Result<Experiment, CliError> {
    config.experiment.ok_or_else(|| CliError::Config("config names no experiment".into()))
}

fn main_inner(cli: Cli) -> Result<u8, CliError> {
    let config = load(&cli.common)?;
    let experiment = match cli.command {
        Command::Simulate => Experiment::Simulate,
        Command::Density => Experiment::Density,
        Command::RefineConsistency => Experiment::RefineConsistency,
        Command::Converge => Experiment::Converge,
        Command::VerifyInequalities => Experiment::VerifyInequalities,
        Command::IbpCheck => Experiment::IbpCheck,
        Command::MartingaleTest => Experiment::MartingaleTest,
        Command::Run => from_config(&config)?,
        Command::Describe { experiment } => {
            let e = match experiment {
                Some(e) => e,
                None => from_config(&config)?,
            };
            print!("{}", describe(&config, e)?);
            return Ok(0);
        }
    };
    let outcome = run(&config, experiment)?;
    for c in &outcome.checks {
        println!("[{}] {}: {:.6e} (tolerance {:.6e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    println!("{}: {}", experiment.name(), if outcome.passed { "passed" } else { "FAILED" });
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
