use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coda::algorithms::AlgoKind;
use coda::harness::{csv_string, emit_csv, emit_summary, parse_config, run_experiment};
use coda::oracle::check_gradients;
use coda::problems::{build_problem, ProblemParams, PROBLEM_NAMES};
use coda::{CodaError, Result};

#[derive(Parser)]
#[command(name = "coda", version, about = "Stochastic compositional minimax experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its trajectories as CSV.
    Run {
        config: PathBuf,
        /// CSV destination; overrides the config's `out`, stdout when neither is set.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the config's seeds with 0..N.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare analytic derivatives of a suite problem with finite differences.
    CheckGradients {
        problem: String,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Problem parameter as key=value; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    ListProblems,
    ListAlgos,
}

fn run(config: PathBuf, out: Option<PathBuf>, seeds: Option<u64>, threads: Option<usize>) -> Result<bool> {
    let text = std::fs::read_to_string(&config).map_err(|source| CodaError::Io { path: config.clone(), source })?;
    let mut cfg = parse_config(&text)?;
    if let Some(n) = seeds {
        if n == 0 {
            return Err(CodaError::Config("--seeds must be positive".into()));
        }
        cfg.seeds = (0..n).collect();
    }
    let runs = run_experiment(&cfg, threads)?;
    match out.or_else(|| cfg.out_path.as_ref().map(PathBuf::from)) {
        Some(path) => emit_csv(&runs, &path)?,
        None => {
            let ok: Vec<_> = runs.iter().filter_map(|r| r.result.as_ref().ok().map(|res| (r.seed, res))).collect();
            print!("{}", csv_string(&ok));
        }
    }
    eprint!("{}", emit_summary(&runs));
    Ok(runs.iter().all(|r| r.result.is_ok()))
}

fn check(problem: &str, tol: f64, points: usize, seed: u64, raw: &[String]) -> Result<bool> {
    let mut params = ProblemParams::new();
    for kv in raw {
        let (k, v) = kv.split_once('=').ok_or_else(|| CodaError::Config(format!("expected KEY=VALUE, got '{kv}'")))?;
        params.set(k.trim(), v.trim());
    }
    let p = build_problem(problem, &params)?;
    let report = check_gradients(p.as_ref(), points, tol, seed)?;
    for c in &report.checks {
        println!(
            "{:<16} max_rel_err {:.3e} at {:?} {}",
            c.name,
            c.max_rel_err,
            c.worst_entry,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(report.passed())
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
    let outcome = match cli.command {
        Command::Run { config, out, seeds, threads } => run(config, out, seeds, threads),
        Command::CheckGradients { problem, tol, points, seed, params } => check(&problem, tol, points, seed, &params),
        Command::ListProblems => {
            for name in PROBLEM_NAMES {
                println!("{name}");
            }
            Ok(true)
        }
        Command::ListAlgos => {
            for k in AlgoKind::ALL {
                println!("{:<18} {}", k.name(), k.required_mode().name());
            }
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
