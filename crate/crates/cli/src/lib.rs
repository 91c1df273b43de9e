//! Batch front end for the wass-splines solvers: reads a JSON scenario,
//! runs one solver and writes CSV artifacts plus a `manifest.json`.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod artifacts;
pub mod config;
mod solve;

pub use artifacts::{FileEntry, Manifest, MANIFEST};
pub use config::{load, Resolved, ScenarioConfig, SolverKind};

pub const THREADS_ENV: &str = "WASS_SPLINES_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("solver error: {0}")]
    Solver(#[from] wass_splines::Error),

    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 config, 3 solver, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Solver(wass_splines::Error::Io(_)) => 4,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

/// Validates the config and runs it. `out` overrides the configured output
/// directory. Returns the manifest path.
pub fn run(config: &Path, out: Option<&Path>) -> Result<(PathBuf, Manifest), CliError> {
    let r = load(config)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| r.output_dir.clone());
    solve::run(&r, &dir)?.finish()
}

/// Reads `WASS_SPLINES_THREADS` and sizes the global thread pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config { field: THREADS_ENV.into(), msg: format!("expected a positive integer, got {v:?}") })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
