// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use closedloop::scenario::{execute, summarize_report, validate_config, Report, ScenarioRun, Status};

#[derive(Parser)]
#[command(name = "closedloop", version, about = "Run closed-loop equilibrium, flow and curvature scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario configs. Several configs run as a batch.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// CSV trajectory path (single config only).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// JSON report path (single config only).
        #[arg(long)]
        json: Option<PathBuf>,
        /// Suppress the per-scenario summary on stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Validate configs and print the normalized form.
    Check {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Pretty-print the verdicts of report files.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

/// 0 < 2 < 1: an error anywhere dominates a check violation.
fn combine(a: u8, b: u8) -> u8 {
    let rank = |c: u8| match c {
        0 => 0,
        2 => 1,
        _ => 2,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn run_one(path: &Path, csv: Option<&str>, json: Option<&str>) -> Result<ScenarioRun, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config = validate_config(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
    execute(&config, csv, json).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_summary(path: &Path, report: &Report) {
    let status = match report.status {
        Status::Ok => "ok",
        Status::Violation => "violation",
        Status::Error => "error",
    };
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
    println!(
        "{}: {} fitted_rate={} theoretical_rate={} max_violation={}",
        path.display(),
        status,
        fmt(report.fitted_rate),
        fmt(report.theoretical_rate),
        report.max_violation.map_or("-".to_string(), |v| format!("{v:.3e}")),
    );
    for w in &report.warnings {
        println!("  warning: {w}");
    }
    if let Some(e) = &report.error {
        println!("  error: {}", e.message);
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("CLOSEDLOOP_THREADS").ok()?.parse().ok().filter(|n| *n > 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            configs,
            csv,
            json,
            quiet,
        } => {
            if configs.len() > 1 && (csv.is_some() || json.is_some()) {
                eprintln!("--csv and --json apply to a single config; set outputs in each config for batches");
                return ExitCode::from(1);
            }
            let csv = csv.map(|p| p.to_string_lossy().into_owned());
            let json = json.map(|p| p.to_string_lossy().into_owned());
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = thread_cap() {
                builder = builder.num_threads(n);
            }
            let pool = match builder.build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("thread pool: {e}");
                    return ExitCode::from(1);
                }
            };
            let results: Vec<_> = pool.install(|| {
                configs
                    .par_iter()
                    .map(|p| run_one(p, csv.as_deref(), json.as_deref()))
                    .collect()
            });
            let mut code = 0u8;
            for (path, result) in configs.iter().zip(results) {
                match result {
                    Ok(run) => {
                        if !quiet {
                            print_summary(path, &run.report);
                        }
                        code = combine(code, run.exit_code() as u8);
                    }
                    Err(msg) => {
                        eprintln!("{msg}");
                        code = combine(code, 1);
                    }
                }
            }
            code
        }
        Command::Check { configs } => {
            let mut code = 0u8;
            for path in &configs {
                match std::fs::read_to_string(path)
                    .map_err(|e| e.to_string())
                    .and_then(|raw| validate_config(&raw).map_err(|e| e.to_string()))
                {
                    Ok(config) => println!("{}", config.to_json_string()),
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        code = 1;
                    }
                }
            }
            code
        }
        Command::Report { reports } => {
            let mut code = 0u8;
            for path in &reports {
                match std::fs::read_to_string(path)
                    .map_err(|e| e.to_string())
                    .and_then(|raw| summarize_report(&raw).map_err(|e| e.to_string()))
                {
                    Ok(text) => println!("{text}"),
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        code = 1;
                    }
                }
            }
            code
        }
    };
    ExitCode::from(code)
}
