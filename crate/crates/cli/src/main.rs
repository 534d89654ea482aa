use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use collapse_core::harness::{
    analyze, eval_checkpoints, load_endpoints, run_experiment, run_filter, write_report, ExperimentConfig,
    FilterConfig, FilterJob, ReportKind, RunOptions, RunOutcome,
};
use collapse_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_CORRUPTION: u8 = 4;

#[derive(Parser)]
#[command(name = "collapse-lab", version, about = "Recursive synthetic-training experiments")]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Figures,
    Tables,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a recursive training experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Abort on the first failure.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        resume: bool,
        /// Stop after ALPHA_INDEX:GENERATION (for interruption testing).
        #[arg(long, hide = true, value_parser = parse_stop)]
        stop_after: Option<(usize, u32)>,
    },
    /// Evaluate externally trained checkpoints served over HTTP.
    Eval {
        #[arg(long)]
        endpoints: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Build a topic-aligned training corpus.
    Filter {
        #[arg(long)]
        topic: String,
        /// JSON map of topic to questions, or a QA JSONL file.
        #[arg(long)]
        exemplars: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source documents, blank-line separated.
        #[arg(long)]
        corpus: PathBuf,
        /// Filter settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print collapse onsets, decay fits and a two-way ANOVA for a run.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// Two of: format, generation, alpha, subject.
        #[arg(long, value_delimiter = ',')]
        anova: Option<Vec<String>>,
    },
    /// Write plot-data or statistics tables under the run's tables/ directory.
    Report {
        /// Run directory; repeat to compare runs in the mitigation figure.
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Keep every N-th generation (and the last).
        #[arg(long)]
        every: Option<u32>,
    },
    /// Configuration helpers.
    Config {
        #[arg(long)]
        print_defaults: bool,
        /// Print filter defaults instead of experiment defaults.
        #[arg(long)]
        filter: bool,
    },
}

fn parse_stop(s: &str) -> Result<(usize, u32), String> {
    let (a, g) = s.split_once(':').ok_or("expected ALPHA_INDEX:GENERATION")?;
    Ok((
        a.parse().map_err(|e| format!("{e}"))?,
        g.parse().map_err(|e| format!("{e}"))?,
    ))
}

/// Write to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Argument(_)
        | Error::Unsupported(_)
        | Error::Locked(_)
        | Error::Contamination(_)
        | Error::UnbalancedDesign(_) => EXIT_VALIDATION,
        Error::Corruption { .. } => EXIT_CORRUPTION,
        _ => EXIT_PARTIAL,
    }
}

fn finish_run(outcome: RunOutcome) -> ExitCode {
    let m = &outcome.manifest;
    let gens: usize = m.series.iter().map(|s| s.generations.len()).sum();
    emit(&format!(
        "{}: {} series, {gens} generation records, {} failure(s){}\n",
        outcome.run_dir.display(),
        m.series.len(),
        m.failures.len(),
        if outcome.stopped_early { ", stopped early" } else { "" }
    ));
    for f in &m.failures {
        eprintln!(
            "failure: {} gen {} {}: {}",
            f.label,
            f.generation,
            f.cell.as_deref().unwrap_or("-"),
            f.message
        );
    }
    if outcome.failed() {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(cmd: Command) -> collapse_core::Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            strict,
            resume,
            stop_after,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_experiment(
                &cfg,
                &RunOptions {
                    strict,
                    resume,
                    stop_after,
                },
            )?;
            Ok(finish_run(outcome))
        }
        Command::Eval {
            endpoints,
            config,
            strict,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let eps = load_endpoints(&endpoints)?;
            let outcome = eval_checkpoints(
                &eps,
                &cfg,
                &RunOptions {
                    strict,
                    ..RunOptions::default()
                },
            )?;
            Ok(finish_run(outcome))
        }
        Command::Filter {
            topic,
            exemplars,
            out,
            corpus,
            config,
        } => {
            let config = match config {
                Some(p) => FilterConfig::load(&p)?,
                None => FilterConfig::default(),
            };
            let summary = run_filter(&FilterJob {
                corpus,
                topic,
                exemplars,
                out: out.clone(),
                config,
            })?;
            emit(&format!(
                "{}: {} segments retained, {} blocks (shortfall {}), {} short sections dropped\n",
                out.display(),
                summary.segments_retained,
                summary.blocks,
                summary.shortfall,
                summary.dropped_sections
            ));
            for d in &summary.diagnostics {
                eprintln!("note: {d}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze { run, anova } => {
            let factors = match anova.as_deref() {
                None => None,
                Some([a, b]) => Some([a.as_str(), b.as_str()]),
                Some(_) => return Err(Error::Argument("--anova takes exactly two factors".into())),
            };
            emit(&analyze(&run, factors)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run, kind, every } => {
            let kind = match kind {
                Kind::Figures => ReportKind::Figures,
                Kind::Tables => ReportKind::Tables,
            };
            for f in write_report(&run, kind, every)? {
                emit(&format!("{}\n", run[0].join(&f.path).display()));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Config { print_defaults, filter } => {
            if !print_defaults {
                return Err(Error::Argument("nothing to do; pass --print-defaults".into()));
            }
            if filter {
                emit(&(FilterConfig::default().to_json_pretty() + "\n"));
            } else {
                emit(&(ExperimentConfig::defaults_json() + "\n"));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
