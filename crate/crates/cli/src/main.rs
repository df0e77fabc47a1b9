//! `knothe-epi` command-line driver.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 invalid
//! configuration, 3 numerical failure, 4 a check failed under `--assert`.

mod commands;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Context, Output};
use crate::config::{Command, ConfigError};

#[derive(Parser)]
#[command(name = "knothe-epi", version, about = "Triangular transport maps and entropy power inequality checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Entropy of `x` by each requested estimator, with the 1D oracle.
    Entropy(Common),
    /// Triangularity, monotonicity, KS and affine diagnostics of the maps to `x` (and `y`).
    MapCheck(Common),
    /// Both sides of the inequality and the gap decomposition for every lambda;
    /// also writes a CSV next to `--out`.
    Epi(Common),
    /// Entropy of `x + √t·Z` along `t_values`.
    Smooth(Common),
    /// `n_samples` inverse-transform draws of `x` as CSV at `--out`.
    Sample(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file: one JSON object or an array of them.
    #[arg(long)]
    config: PathBuf,
    /// Report path (stdout when absent). For `sample` this is the CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    /// Exit with code 4 when any check fails.
    #[arg(long)]
    assert: bool,
    /// Leave wall-clock fields out of the report.
    #[arg(long)]
    no_timestamp: bool,
    /// Overrides the seed of every scenario.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(ConfigError),
    Numerical(knothe_epi::Error),
    Write(PathBuf, std::io::Error),
    Assert,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Write(..) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Assert => 4,
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    let (command, opts) = match cmd {
        Cmd::Entropy(o) => (Command::Entropy, o),
        Cmd::MapCheck(o) => (Command::MapCheck, o),
        Cmd::Epi(o) => (Command::Epi, o),
        Cmd::Smooth(o) => (Command::Smooth, o),
        Cmd::Sample(o) => (Command::Sample, o),
    };
    let mut configs = config::load(&opts.config).map_err(Failure::Config)?;
    if let Some(seed) = opts.seed {
        configs.iter_mut().for_each(|c| c.seed = seed);
    }
    config::validate(&configs, command).map_err(Failure::Config)?;
    let side_path = |ext: &str| -> Result<PathBuf, Failure> {
        match &opts.out {
            Some(p) if p.extension().is_some_and(|e| e == ext) => Err(Failure::Config(ConfigError::Invalid {
                field: "--out".into(),
                reason: format!("{} would be overwritten by the .{ext} output", p.display()),
            })),
            Some(p) => Ok(p.with_extension(ext)),
            None => Err(Failure::Config(ConfigError::Invalid { field: "--out".into(), reason: "required by this command".into() })),
        }
    };
    if let Some(k) = opts.threads {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k as usize).build_global();
    }
    let ctx = Context { configs: &configs, started: (!opts.no_timestamp).then(std::time::Instant::now) };
    let output: Output = match command {
        Command::Entropy => commands::entropy(&ctx),
        Command::MapCheck => commands::map_check(&ctx),
        Command::Epi => {
            let csv = side_path("csv")?;
            commands::epi(&ctx, csv)
        }
        Command::Smooth => commands::smooth(&ctx),
        Command::Sample => {
            let csv = opts.out.clone().ok_or_else(|| {
                Failure::Config(ConfigError::Invalid { field: "--out".into(), reason: "required by this command".into() })
            })?;
            commands::sample(&ctx, csv)
        }
    }
    .map_err(Failure::Numerical)?;

    let report_path = if command == Command::Sample { None } else { opts.out.as_deref() };
    for (path, bytes) in &output.files {
        write(path, bytes)?;
    }
    match report_path {
        Some(p) => write(p, &output.report)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&output.report).map_err(|e| Failure::Write("stdout".into(), e))?;
        }
    }
    if opts.assert && !output.passed {
        return Err(Failure::Assert);
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Write(path.to_path_buf(), e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("configuration error: {e}"),
                Failure::Numerical(e) => eprintln!("numerical failure: {e}"),
                Failure::Write(p, e) => eprintln!("cannot write {}: {e}", p.display()),
                Failure::Assert => eprintln!("assertion failed: see `passed` in the report"),
            }
            ExitCode::from(f.code())
        }
    }
}
