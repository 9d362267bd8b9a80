use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qscope::{execute, Command, Format, Invocation, OUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "qscope", version, about = "Simulate and fit fixed-delay Ramsey measurements of low-frequency fields")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep a constant field and fit the readout fringe (or locate zero field).
    Calibrate(RunArgs),
    /// Simulate one acquisition and fit the field.
    Qscope(RunArgs),
    /// Engine and Monte Carlo sensitivity versus frequency.
    Sensitivity(RunArgs),
    /// Locate zero field, then measure at a small background field.
    ZeroField(RunArgs),
    /// Simulate and fit a free-induction decay.
    Fid(RunArgs),
    /// Scaled spectrum of the converted field and a Lorentzian fit.
    Spectral(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON), or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo jobs (results do not depend on it).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Root for relative run directories.
    #[arg(long = "out-root", env = OUT_ROOT_ENV, hide = true)]
    out_root: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, a) = match cli.command {
        Cmd::Calibrate(a) => (Command::Calibrate, a),
        Cmd::Qscope(a) => (Command::Qscope, a),
        Cmd::Sensitivity(a) => (Command::Sensitivity, a),
        Cmd::ZeroField(a) => (Command::ZeroField, a),
        Cmd::Fid(a) => (Command::Fid, a),
        Cmd::Spectral(a) => (Command::Spectral, a),
    };
    let inv = Invocation {
        command,
        config: a.config,
        seed: a.seed,
        out: a.out,
        jobs: a.jobs,
        format: a.format,
        out_root: a.out_root,
    };
    match execute(&inv) {
        Ok(outcome) => {
            let w = outcome.summary.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0).max("output".len());
            for (k, v) in &outcome.summary {
                println!("{k:<w$}  {v}");
            }
            println!("{:<w$}  {}", "output", outcome.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
