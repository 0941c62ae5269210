use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ldm_core::sim::faults::{CompiledFaults, FaultSchedule};
use ldm_core::sim::scenario::Scenario;
use ldm_core::sim::sweep::{sweep, write_csv, SweepMetric};
use ldm_core::sim::{metrics, placement_map, run};
use ldm_core::Error;
use serde_json::json;

const EXIT_VALIDATION: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "ldm-sim", version, about = "Simulate decentralized service placement across Local Domain Managers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and report the final placement.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Fault schedule (crashes, restarts, partitions, loss bursts).
        #[arg(long)]
        faults: Option<PathBuf>,
        /// Overrides the scenario's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Event stream output, one JSON object per line.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Run summary output; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Print the exhaustive optimal placement and its cost.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Measure registration or voting latency over cluster sizes.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,5,10,20")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        metric: SweepMetric,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(Error),
    Invariant(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn classify(e: Error) -> Failure {
    match e {
        // Bad input, including scenarios too large for the exhaustive oracle.
        Error::Validation { .. } | Error::Io(_) | Error::InvalidArgument(_) | Error::CapacityExceeded(_) => Failure::Validation(e),
        Error::InvalidState(m) | Error::CorruptedLog(m) => Failure::Invariant(m),
        other => Failure::Other(other.into()),
    }
}

fn load(path: &PathBuf) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(classify)
}

fn write_json(path: Option<&PathBuf>, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}")?;
            Ok(())
        }
    }
}

fn cmd_run(
    scenario: &PathBuf,
    faults: Option<&PathBuf>,
    seed: Option<u64>,
    metrics_path: Option<&PathBuf>,
    summary_path: Option<&PathBuf>,
) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let compiled = match faults {
        Some(p) => {
            let (schedule, raw) = FaultSchedule::load(p).map_err(classify)?;
            schedule.compile_with_source(&sc.members, Some(&raw)).map_err(classify)?
        }
        None => CompiledFaults::default(),
    };
    let out = run(&sc, &compiled, seed).map_err(classify)?;
    if let Some(p) = metrics_path {
        metrics::write_jsonl(p, &out.events).map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?;
    }
    write_json(summary_path, &serde_json::to_value(&out.summary).context("summary")?)?;
    let s = &out.summary;
    eprintln!(
        "cost {} -> {} (oracle {}), {} committed, {} elections, quiescent: {}",
        s.initial_cost,
        s.final_cost,
        s.oracle_cost.map_or("n/a".into(), |c| c.to_string()),
        s.proposals_committed,
        s.leader_elections,
        s.quiescent
    );
    if !s.violations.is_empty() {
        return Err(Failure::Invariant(s.violations.join("; ")));
    }
    if !s.placements_agree {
        return Err(Failure::Invariant("live nodes at the same log position disagree on placement".into()));
    }
    Ok(())
}

fn cmd_oracle(scenario: &PathBuf) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let (best, cost) = sc.oracle().map_err(classify)?;
    let moves: Vec<_> = sc
        .placement
        .diff(&best)
        .into_iter()
        .map(|(s, from, to)| json!({"service": s, "from": from, "to": to}))
        .collect();
    write_json(
        None,
        &json!({
            "cost": cost,
            "initial_cost": sc.initial_cost(),
            "placement": placement_map(&best),
            "moves": moves,
        }),
    )?;
    Ok(())
}

fn cmd_sweep(scenario: &PathBuf, sizes: &[usize], reps: usize, metric: SweepMetric, out: &PathBuf) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let rows = sweep(&sc, sizes, reps, metric).map_err(classify)?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&rows, file).map_err(|e| anyhow::anyhow!("writing {}: {e}", out.display()))?;
    let mut stdout = io::stdout().lock();
    for r in &rows {
        writeln!(stdout, "{}", serde_json::to_string(r).context("row")?).context("stdout")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            faults,
            seed,
            metrics,
            summary,
        } => cmd_run(scenario, faults.as_ref(), *seed, metrics.as_ref(), summary.as_ref()),
        Command::Oracle { scenario } => cmd_oracle(scenario),
        Command::Sweep {
            scenario,
            sizes,
            reps,
            metric,
            out,
        } => cmd_sweep(scenario, sizes, *reps, *metric, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("validation error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violation: {m}");
            ExitCode::from(EXIT_INVARIANT)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
