//! Experiment runner for the prompt-copying analysis toolkit.
//!
//! Subcommands form a pipeline over one output directory:
//! `gen` writes the dataset, `baseline` filters it by model correctness,
//! `sweep` ranks heads by knockout success, `knockout` measures
//! before/after behavior under a plan, `analyze` emits the curve and
//! attention artifacts, and `report` renders everything as text.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing artifact,
//! 4 runtime evaluation error.

mod commands;
mod config;
mod error;
mod pipeline;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::Artifacts;

#[derive(Parser)]
#[command(
    name = "pih",
    about = "Prompt-copying head analysis over a toy multimodal transformer",
    version
)]
struct Cli {
    /// Experiment configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory holding the run artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the scene manifest and prompt instances
    Gen,
    /// Retain the samples the model answers correctly
    Baseline,
    /// Rank heads by knockout success, then group the top-m
    Sweep,
    /// Measure before/after behavior under an ablation plan
    Knockout {
        /// Comma-separated head list, e.g. "L0H6,L1H2"; defaults to the
        /// sweep's selected group
        #[arg(long)]
        heads: Option<String>,
    },
    /// Emit curve, probability, attention-mass, and heatmap data
    Analyze {
        /// Comma-separated head list; defaults to the sweep's selected group
        #[arg(long)]
        heads: Option<String>,
    },
    /// Render a consolidated text summary of a completed run
    Report,
}

/// Plan source shared by `knockout` and `analyze`: an explicit head list
/// or the sweep's selected grouping.
fn resolve_plan(art: &Artifacts, heads: Option<&str>) -> Result<pih_core::AblationPlan, CliError> {
    if let Some(spec) = heads {
        let heads: BTreeSet<pih_core::HeadId> = spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                pih_core::HeadId::parse(s)
                    .ok_or_else(|| CliError::Config(format!("cannot parse head {s:?}")))
            })
            .collect::<Result<_, _>>()?;
        if heads.is_empty() {
            return Err(CliError::Config("--heads names no heads".into()));
        }
        return Ok(pih_core::AblationPlan::new(heads));
    }
    art.require(&[art.sweep(), art.grouped()])?;
    let sweep = std::fs::read_to_string(art.sweep())
        .map_err(|e| CliError::Runtime(format!("reading sweep: {e}")))?;
    let mut scored: Vec<(pih_core::HeadId, f64)> = sweep
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let fields: Vec<&str> = l.split(',').collect();
            let parse = || -> Option<(pih_core::HeadId, f64)> {
                Some((
                    pih_core::HeadId::new(
                        fields.first()?.parse().ok()?,
                        fields.get(1)?.parse().ok()?,
                    ),
                    fields.get(2)?.parse().ok()?,
                ))
            };
            parse().ok_or_else(|| CliError::Runtime("malformed sweep.csv row".into()))
        })
        .collect::<Result<_, _>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let grouped = std::fs::read_to_string(art.grouped())
        .map_err(|e| CliError::Runtime(format!("reading grouped: {e}")))?;
    let selected_m: usize = grouped
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .find_map(|l| {
            let fields: Vec<&str> = l.split(',').collect();
            (*fields.get(3)? == "1").then(|| fields.get(1)?.parse().ok())?
        })
        .ok_or_else(|| CliError::Runtime("grouped.csv has no selected row".into()))?;
    Ok(pih_core::AblationPlan::new(
        scored.into_iter().take(selected_m).map(|(h, _)| h),
    ))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    let art = Artifacts::new(out);
    if let Command::Report = cli.command {
        return commands::run_report(&art);
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.run.threads = threads;
    }
    if config.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.threads)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out.display())))?;

    match &cli.command {
        Command::Gen => commands::run_gen(&config, &art),
        Command::Baseline => commands::run_baseline(&config, &art),
        Command::Sweep => commands::run_sweep(&config, &art),
        Command::Knockout { heads } => commands::run_knockout(&config, &art, heads.as_deref()),
        Command::Analyze { heads } => commands::run_analyze(&config, &art, heads.as_deref()),
        Command::Report => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
