use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perfrl_cli::{cmd_check, cmd_compare, cmd_constants, cmd_run, configure_threads, load, CliError, CliResult};

#[derive(Parser)]
#[command(name = "perfrl", version, about = "Performative RL experiments: zeroth-order Frank-Wolfe vs repeated retraining")]
struct Cli {
    /// Write outputs here instead of the config's output.dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm and write a CSV trace plus a JSON summary.
    Run { config: PathBuf },
    /// Print the theory constants (and the schedule if `theory` is set) as JSON.
    Constants { config: PathBuf },
    /// Run the selected checker suites; exits 3 on violations.
    Check {
        config: PathBuf,
        /// Replace the computed gradient-dominance modulus (negative control).
        #[arg(long, hide = true, allow_negative_numbers = true)]
        debug_mu: Option<f64>,
    },
    /// Run both algorithms on the same environment and compare them.
    Compare { config: PathBuf },
}

fn dispatch(cli: &Cli) -> CliResult<usize> {
    configure_threads()?;
    let out = cli.out_dir.as_deref();
    let output = match &cli.command {
        Command::Run { config } => cmd_run(&load(config)?, out)?,
        Command::Constants { config } => cmd_constants(&load(config)?)?,
        Command::Check { config, debug_mu } => cmd_check(&load(config)?, *debug_mu)?,
        Command::Compare { config } => cmd_compare(&load(config)?, out)?,
    };
    print!("{}", output.stdout);
    Ok(output.violations)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let err = match dispatch(&cli) {
        Ok(0) => return ExitCode::SUCCESS,
        Ok(count) => CliError::Violations { count },
        Err(e) => e,
    };
    eprintln!("perfrl: {err}");
    ExitCode::from(err.exit_code() as u8)
}
