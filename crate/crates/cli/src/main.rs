mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hypogen::evaluation::{eval_output, ingest_scores, qualified_id, render_report, report_counts};
use hypogen::orchestrator::{
    collect_hypotheses, load_run, resume, Orchestrator, OrchestratorError, RunRecord, RunStatus,
};
use hypogen::specdata::{extract_claim_refs, parse_presence_table, verify_grounding, PresenceMatrix};

/// Multi-agent hypothesis generation over mass-spectrometry presence data.
#[derive(Debug, Parser)]
#[command(name = "hypogen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start a new run from a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        iterations: Option<u32>,
        /// Provider id; `scripted` works offline even when not configured.
        #[arg(long)]
        provider: Option<String>,
        /// Parent directory for the run (overrides `[run] output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue an interrupted or failed run.
    Resume { run_dir: PathBuf },
    /// Check every hypothesis's cited data points against a data table.
    Verify {
        run_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Classify scored hypotheses and print aggregate statistics.
    Eval {
        run_dir: PathBuf,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Write a Markdown report (plus counts as JSON next to it).
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const RUN_FAILED: u8 = 2;
const VIOLATIONS: u8 = 2;

fn print_summary(run: &RunRecord) {
    println!("run id: {}", run.run_id);
    println!("run directory: {}", run.run_dir.display());
    let done = run.iterations.len();
    match run.status {
        RunStatus::Completed => println!("{done} iterations completed"),
        _ => println!("{done} of {} iterations completed", run.config.iterations),
    }
    println!("{} hypotheses", collect_hypotheses(run).len());
    println!("total cost: {}", run.total_cost);
}

fn run_outcome(outcome: Result<RunRecord, OrchestratorError>) -> Result<ExitCode> {
    match outcome {
        Ok(run) => {
            print_summary(&run);
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ (OrchestratorError::Stage { .. } | OrchestratorError::Gateway(_) | OrchestratorError::Scholar(_))) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(RUN_FAILED))
        }
        Err(e) => Err(e.into()),
    }
}

async fn cmd_run(path: &Path, overrides: config::Overrides) -> Result<ExitCode> {
    let cfg = config::load(path, &overrides)?;
    let orchestrator = Orchestrator::from_config(cfg)?;
    run_outcome(orchestrator.run().await)
}

fn load_matrix(path: &Path) -> Result<PresenceMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read data file {}", path.display()))?;
    parse_presence_table(&text).with_context(|| format!("invalid data file {}", path.display()))
}

fn cmd_verify(run_dir: &Path, data: &Path) -> Result<ExitCode> {
    let run = load_run(run_dir)?;
    let matrix = load_matrix(data)?;
    let mut out = std::io::stdout().lock();
    let mut violated = 0;
    for h in collect_hypotheses(&run) {
        let report = verify_grounding(&matrix, &extract_claim_refs(&h.key_datapoints, &matrix));
        writeln!(out, "{}: {}", qualified_id(&h), report.summary())?;
        for a in &report.violated {
            writeln!(out, "  violated: {a}")?;
        }
        for token in &report.unresolved {
            writeln!(out, "  unresolved: {token}")?;
        }
        violated += report.violated.len();
    }
    if violated > 0 {
        eprintln!("{violated} violated assertions");
        return Ok(ExitCode::from(VIOLATIONS));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(run_dir: &Path, scores: &Path) -> Result<ExitCode> {
    let run = load_run(run_dir)?;
    let cards = ingest_scores(scores)?;
    let text = eval_output(&collect_hypotheses(&run), &cards)?;
    std::io::stdout().lock().write_all(text.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(run_dir: &Path, scores: &Path, out: &Path) -> Result<ExitCode> {
    let run = load_run(run_dir)?;
    let cards = ingest_scores(scores)?;
    let cfg = &run.config;
    let matrix = load_matrix(&cfg.data_path)?;
    let markdown = render_report(&run, &cards, &matrix)?;
    std::fs::write(out, markdown).with_context(|| format!("cannot write {}", out.display()))?;
    let counts_path = out.with_extension("json");
    let counts = serde_json::to_string_pretty(&report_counts(&run, &cards))? + "\n";
    std::fs::write(&counts_path, counts).with_context(|| format!("cannot write {}", counts_path.display()))?;
    println!("report: {}", out.display());
    println!("counts: {}", counts_path.display());
    Ok(ExitCode::SUCCESS)
}

async fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            iterations,
            provider,
            out,
        } => {
            let overrides = config::Overrides {
                iterations,
                provider,
                out,
            };
            cmd_run(&config, overrides).await
        }
        Command::Resume { run_dir } => run_outcome(resume(&run_dir).await),
        Command::Verify { run_dir, data } => cmd_verify(&run_dir, &data),
        Command::Eval { run_dir, scores } => cmd_eval(&run_dir, &scores),
        Command::Report { run_dir, scores, out } => cmd_report(&run_dir, &scores, &out),
    }
}

/// A closed stdout (e.g. piped into `head`) is not an error worth reporting.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<std::io::Error>()
        .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match dispatch(Cli::parse()).await {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
