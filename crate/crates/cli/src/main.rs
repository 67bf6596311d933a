//! `pufferkit`: calibrate, convert, compose, audit and estimate from the shell.
//!
//! Reports go to stdout as JSON (the `convert` subcommand prints plain numbers
//! unless `--json` is given). The run manifest goes to `--manifest PATH`, or
//! to stderr as a single JSON line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 capability error,
//! 3 audit decision "violation".

mod commands;
mod json;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use manifest::{DigestBuilder, RunManifest, SeedRecord, SeedSource};

#[derive(Parser, Debug)]
#[command(
    name = "pufferkit",
    version,
    about = "Mutual-information Pufferfish privacy toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Master seed; falls back to PUFFERKIT_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel estimators (default: logical cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the run manifest here instead of stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate Laplace or Gaussian noise for a query under a framework.
    Calibrate(commands::CalibrateArgs),
    /// Convert between PP, MI-PP and approximate PP parameters.
    Convert(commands::ConvertArgs),
    /// Total MI-PP level of a composition described in a budget file.
    Compose(commands::ComposeArgs),
    /// Audit black-box samples for an eps-DP violation with the SMI test.
    Audit(commands::AuditArgs),
    /// Private mean of a CSV of samples.
    MeanEstimate(commands::MeanEstimateArgs),
    /// Exact conditional MI of a mechanism on a finite discrete framework.
    OracleMi(commands::OracleMiArgs),
    /// Sliced MI of a sample file, or the per-record DP statistic of a directory.
    SmiEstimate(commands::SmiEstimateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::Convert(_) => "convert",
            Command::Compose(_) => "compose",
            Command::Audit(_) => "audit",
            Command::MeanEstimate(_) => "mean-estimate",
            Command::OracleMi(_) => "oracle-mi",
            Command::SmiEstimate(_) => "smi-estimate",
        }
    }
}

/// Why a run stopped without a report.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Capability(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Capability(_) => 2,
        }
    }
}

impl From<pufferkit::Error> for Failure {
    fn from(e: pufferkit::Error) -> Self {
        if e.is_capability() {
            Failure::Capability(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(format!("serialisation failed: {e}"))
    }
}

/// What a subcommand hands back to `main`.
pub struct Output {
    pub stdout: String,
    pub params: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub violation: bool,
}

impl Output {
    pub fn json<R: Serialize, P: Serialize>(report: &R, params: &P) -> Result<Self, Failure> {
        Ok(Output {
            stdout: json::to_pretty(report)?,
            params: serde_json::to_value(params)?,
            inputs: vec![],
            violation: false,
        })
    }

    pub fn with_inputs(mut self, inputs: impl IntoIterator<Item = PathBuf>) -> Self {
        self.inputs.extend(inputs);
        self
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<SeedRecord, Failure> {
    if let Some(seed) = flag {
        return Ok(SeedRecord {
            seed,
            source: SeedSource::Flag,
        });
    }
    match std::env::var("PUFFERKIT_SEED") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(|seed| SeedRecord {
                seed,
                source: SeedSource::Environment,
            })
            .map_err(|_| {
                Failure::Usage(format!(
                    "PUFFERKIT_SEED must be an unsigned integer, got '{v}'"
                ))
            }),
        _ => Ok(SeedRecord {
            seed: 0,
            source: SeedSource::Default,
        }),
    }
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    let start = Instant::now();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let seeds = resolve_seed(cli.common.seed)?;
    let seed = seeds.seed;
    let name = cli.command.name();
    let out = match cli.command {
        Command::Calibrate(a) => commands::calibrate(a, seed)?,
        Command::Convert(a) => commands::convert(a)?,
        Command::Compose(a) => commands::compose(a)?,
        Command::Audit(a) => commands::audit(a, seed)?,
        Command::MeanEstimate(a) => commands::mean_estimate(a, seed)?,
        Command::OracleMi(a) => commands::oracle_mi(a)?,
        Command::SmiEstimate(a) => commands::smi_estimate(a, seed)?,
    };

    let mut digest = DigestBuilder::new(name, &json::to_compact(&(&out.params, seeds.seed))?);
    for p in &out.inputs {
        digest
            .add_path(p)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
    }
    let (config_digest, inputs) = digest.finish();
    let manifest = RunManifest {
        command: name.into(),
        config_digest,
        params: out.params,
        inputs,
        seeds,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };

    println!("{}", out.stdout);
    match &cli.common.manifest {
        Some(path) => std::fs::write(path, json::to_pretty(&manifest)? + "\n").map_err(|e| {
            Failure::Usage(format!("cannot write manifest {}: {e}", path.display()))
        })?,
        None => eprintln!("{}", json::to_compact(&manifest)?),
    }
    Ok(out.violation)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(3),
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) => format!("error: {m}"),
                Failure::Capability(m) => format!("capability error: {m}"),
            };
            eprintln!("{msg}");
            ExitCode::from(f.code())
        }
    }
}
