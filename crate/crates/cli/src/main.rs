//! Command-line front end: run scenarios, validate them, diff model files,
//! and compare run logs.
//!
//! Exit codes: 0 success, 1 replay mismatch, 2 invalid input, 3 runtime
//! failure mid-run. Logging goes to stderr (configure with `RUST_LOG`);
//! stdout carries only the command's own output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agility_core::{
    compute_divergence, diff, load_scenario, load_weight_table, replay_check, run, CostMode,
    DivergencePolicy, EvalCadence, NatureTable, ScenarioError, SituationModel, WeightTable,
};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agility", version, about = "Track situation models and adapt running processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write its artifacts
    Run(RunArgs),
    /// Check a scenario file without running it
    Validate {
        /// Scenario file
        scenario: PathBuf,
    },
    /// Diff two model files and score the divergence
    DiffModels(DiffArgs),
    /// Compare two event logs, ignoring annotation lines; exits 1 on mismatch
    ReplayCheck {
        /// First log
        a: PathBuf,
        /// Second log
        b: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file
    scenario: PathBuf,
    /// Directory for event logs, divergence timeline, and final models
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the adaptation threshold
    #[arg(long)]
    threshold: Option<f64>,
    /// Override the weight table with one loaded from this file
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Evaluate every N milliseconds instead of the scenario's cadence
    #[arg(long, value_name = "MS")]
    eval_every: Option<u64>,
}

#[derive(Args)]
struct DiffArgs {
    /// Baseline model file
    expected: PathBuf,
    /// Comparison model file
    field: PathBuf,
    /// Weight table file (defaults to uniform 1.0)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Score updates by the fraction of attributes that changed
    #[arg(long)]
    proportional: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let runtime =
                err.downcast_ref::<ScenarioError>().is_some_and(|e| !e.is_validation());
            ExitCode::from(if runtime { 3 } else { 2 })
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::DiffModels(args) => cmd_diff_models(args),
        Command::ReplayCheck { a, b } => cmd_replay_check(&a, &b),
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(threshold) = args.threshold {
        if !threshold.is_finite() || threshold < 0.0 {
            bail!("--threshold must be finite and non-negative, got {threshold}");
        }
        scenario.agility.threshold = threshold;
    }
    if let Some(path) = &args.weights {
        scenario.agility.policy.weights = load_weight_table(path)?;
    }
    if let Some(ms) = args.eval_every {
        if ms == 0 {
            bail!("--eval-every must be positive");
        }
        scenario.agility.cadence = EvalCadence::EveryMs(ms);
    }

    let result = run(&scenario, &args.out)?;
    tracing::info!(
        scenario = %scenario.name,
        out = %result.out_dir.display(),
        "run complete"
    );
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(path: &Path) -> anyhow::Result<ExitCode> {
    let scenario = load_scenario(path)?;
    println!(
        "ok: '{}' ({} field events, {} services, horizon {} ms)",
        scenario.name,
        scenario.field_timeline.len(),
        scenario.registry.len(),
        scenario.end_ms
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_diff_models(args: DiffArgs) -> anyhow::Result<ExitCode> {
    let expected = read_model(&args.expected)?;
    let field = read_model(&args.field)?;
    let weights = match &args.weights {
        Some(path) => load_weight_table(path)?,
        None => WeightTable::default(),
    };
    let policy = DivergencePolicy {
        weights,
        cost_mode: if args.proportional { CostMode::Proportional } else { CostMode::Unit },
        nature: NatureTable::default(),
    };

    let differences = diff(&expected, &field);
    let report = compute_divergence(&differences, &policy, 0);
    for contribution in &report.contributions {
        let difference = &contribution.difference;
        let changed = if difference.changed_attributes.is_empty() {
            String::new()
        } else {
            let names: Vec<&str> =
                difference.changed_attributes.iter().map(String::as_str).collect();
            format!(" [{}]", names.join(", "))
        };
        println!(
            "{:<8} {}{} cost {:.3} x weight {:.3} = {:.3}",
            difference.operation.to_string(),
            difference.key,
            changed,
            contribution.cost,
            contribution.weight,
            contribution.weighted,
        );
    }
    println!(
        "total {:.3} over {} differences, level {}",
        report.total,
        report.contributions.len(),
        report.level
    );
    Ok(ExitCode::SUCCESS)
}

fn read_model(path: &Path) -> anyhow::Result<SituationModel> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SituationModel::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_replay_check(a: &Path, b: &Path) -> anyhow::Result<ExitCode> {
    if replay_check(a, b)? {
        println!("match");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("mismatch");
        Ok(ExitCode::FAILURE)
    }
}
