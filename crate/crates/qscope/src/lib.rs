//! Command-line front end for `qscope-core`: JSON experiment configs,
//! run directories with CSV/JSON tables, and a rayon Monte Carlo executor.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod output;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use commands::Command;
pub use config::ExperimentConfig;
pub use error::CliError;
pub use exec::RayonExecutor;
pub use output::{Format, RunDir};

/// Environment variable naming the root for relative run directories.
pub const OUT_ROOT_ENV: &str = "QSCOPE_OUT_ROOT";

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub format: Format,
    pub out_root: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'static str,
    seed: u64,
    format: &'static str,
    config: &'a ExperimentConfig,
    outputs: &'a [String],
}

pub struct Outcome {
    pub dir: PathBuf,
    pub summary: commands::Summary,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    ExperimentConfig::from_json(&text, path)
}

/// Loads the config, applies flag overrides, runs the command and writes
/// `manifest.json` last so a complete manifest marks a complete run.
pub fn execute(inv: &Invocation) -> Result<Outcome, CliError> {
    let mut cfg = load_config(&inv.config)?;
    if let Some(seed) = inv.seed {
        cfg.seed = seed;
    }
    let dir = output::resolve_dir(inv.out.as_deref(), cfg.output_dir.as_deref(), inv.command.name(), inv.out_root.as_deref());
    let mut run = RunDir::create(dir, inv.format)?;
    let exec = RayonExecutor::new(inv.jobs);
    let summary = commands::run(inv.command, &cfg, &exec, &mut run)?;
    let outputs = run.written().to_vec();
    run.json(
        "manifest",
        &Manifest {
            tool: "qscope",
            version: env!("CARGO_PKG_VERSION"),
            core_version: qscope_core::VERSION,
            command: inv.command.name(),
            seed: cfg.seed,
            format: match inv.format {
                Format::Csv => "csv",
                Format::Json => "json",
            },
            config: &cfg,
            outputs: &outputs,
        },
    )?;
    Ok(Outcome { dir: run.path, summary })
}
