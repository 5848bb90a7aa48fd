//! Experiment harness for the `perfrl` binary: JSON configs in, CSV traces and
//! JSON summaries out.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_check, cmd_compare, cmd_constants, cmd_run, CommandOutput};
pub use config::{load, parse, ExperimentConfig, LoadedConfig};
pub use error::{CliError, CliResult};

/// Environment variable that caps worker threads.
pub const THREADS_VAR: &str = "PERFRL_THREADS";

/// Sizes the global thread pool from [`THREADS_VAR`] if it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::config(THREADS_VAR, format!("expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))
}
