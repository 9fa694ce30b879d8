//! `mfg-consume`: batch driver for the mean-field consumption game solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfg_consume_core::sensitivity::{SweepMode, SweepParam};
use serde_json::json;

use crate::commands::SweepArgs;
use crate::config::{load_config, violations_of, ConfigError, Overrides};
use crate::report::{Artifacts, Manifest};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "mfg-consume",
    version,
    about = "Closed-form mean-field portfolio/consumption equilibria and their checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the scenario's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random stream; overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of time steps; curve parameters are resampled.
    #[arg(long)]
    steps: Option<usize>,
    /// Monte Carlo sample count; overrides `mc.n_samples`.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the equilibrium curves of every type.
    Solve(Common),
    /// Riccati, BSDE residual, optimality drift and relation checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Check this equilibrium CSV instead of a fresh solve.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Mean-field flow and fixed-point consistency of simulated agents.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulated agents per common-noise path; overrides `mc.n_agents`.
        #[arg(long)]
        agents: Option<usize>,
        /// Number of common-noise paths; overrides `mc.n_w0_paths`.
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Paired comparison against the perturbation library.
    Deviate {
        #[command(flatten)]
        common: Common,
        /// Index of the deviating type.
        #[arg(long = "type", default_value_t = 0)]
        probe: usize,
    },
    /// Response at t = 0 as one parameter varies.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        /// `LO:HI`
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
        range: (f64, f64),
        #[arg(long, default_value_t = 400)]
        points: usize,
        #[arg(long, value_enum, default_value_t = Mode::Individual)]
        mode: Mode,
        /// Index of the probe type.
        #[arg(long = "type", default_value_t = 0)]
        probe: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Individual,
    Population,
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    SweepParam::from_str(s)
        .map_err(|_| format!("expected one of h, sigma, sigma0, theta, gamma, alpha; got `{s}`"))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(lo)?, p(hi)?))
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.into())
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("MFG_CONSUME_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Usage(anyhow::anyhow!(
            "MFG_CONSUME_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))
}

fn run(cli: Cli) -> Result<(Manifest, PathBuf), Failure> {
    init_threads()?;
    let (common, name) = match &cli.command {
        Command::Solve(c) => (c, "solve"),
        Command::Verify { common, .. } => (common, "verify"),
        Command::Simulate { common, .. } => (common, "simulate"),
        Command::Deviate { common, .. } => (common, "deviate"),
        Command::Sweep { common, .. } => (common, "sweep"),
    };
    let overrides = Overrides {
        seed: common.seed,
        steps: common.steps,
        samples: common.samples,
        out: common.out.clone(),
    };
    let mut cfg = load_config(&common.config, &overrides)?;
    let mut out = Artifacts::create(&cfg.output).map_err(Failure::Runtime)?;

    let checks = match &cli.command {
        Command::Solve(_) => commands::solve(&cfg, &mut out),
        Command::Verify { solution, .. } => commands::verify(&cfg, solution.as_deref(), &mut out),
        Command::Simulate { agents, paths, .. } => {
            if let Some(n) = agents {
                cfg.mc.n_agents = *n;
            }
            if let Some(n) = paths {
                cfg.mc.n_w0_paths = *n;
            }
            commands::simulate(&cfg, &mut out)
        }
        Command::Deviate { probe, .. } => commands::deviate(&cfg, *probe, &mut out),
        Command::Sweep {
            param,
            range,
            points,
            mode,
            probe,
            ..
        } => {
            let mode = match mode {
                Mode::Individual => SweepMode::Individual,
                Mode::Population => SweepMode::Population,
            };
            let args = SweepArgs {
                param: *param,
                lo: range.0,
                hi: range.1,
                points: *points,
                mode,
                probe: *probe,
            };
            commands::sensitivity(&cfg, &args, &mut out)
        }
    }
    .map_err(|e| {
        let invalid = e
            .downcast_ref::<mfg_consume_core::Error>()
            .and_then(|c| violations_of(c, &cfg.type_names));
        if invalid.is_some() || e.is::<commands::BadInput>() {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    })?;

    let manifest = Manifest {
        command: name.into(),
        config: cfg.source.display().to_string(),
        config_sha256: cfg.sha256.clone(),
        seed: cfg.mc.seed,
        n_steps: cfg.grid().n_steps(),
        files: Vec::new(),
        checks,
        passed: true,
    };
    let dir = out.dir().to_path_buf();
    Ok((out.finish(manifest).map_err(Failure::Runtime)?, dir))
}

fn print_summary(m: &Manifest, dir: &std::path::Path) {
    println!(
        "{} on {} (seed {}, {} steps)",
        m.command, m.config, m.seed, m.n_steps
    );
    for c in &m.checks {
        let tag = if c.passed { "ok  " } else { "FAIL" };
        println!(
            "  {tag} {}: {:e} (tolerance {:e})",
            c.name, c.measured, c.tolerance
        );
    }
    println!(
        "  wrote {} file(s) and manifest.json to {}",
        m.files.len(),
        dir.display()
    );
    println!(
        "{}",
        if m.passed {
            "all checks passed"
        } else {
            "checks failed"
        }
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok((m, dir)) => {
            print_summary(&m, &dir);
            if m.passed {
                ExitCode::SUCCESS
            } else {
                let failed: Vec<_> = m.checks.iter().filter(|c| !c.passed).collect();
                eprintln!("{}", json!({ "status": "check_failed", "failed": failed }));
                ExitCode::from(EXIT_FAILED)
            }
        }
        Err(Failure::Usage(e)) => {
            let violations = match e.downcast_ref::<ConfigError>() {
                Some(ConfigError::Invalid { violations, .. }) => Some(violations.clone()),
                _ => None,
            };
            eprintln!(
                "{}",
                json!({ "status": "usage_error", "message": format!("{e:#}"), "violations": violations })
            );
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!(
                "{}",
                json!({ "status": "error", "message": format!("{e:#}") })
            );
            ExitCode::from(EXIT_FAILED)
        }
    }
}
