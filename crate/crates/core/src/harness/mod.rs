//! Seeded batch experiments: config parsing, parallel execution over seeds,
//! CSV trajectories and median/IQR summaries.

mod config;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use statrs::statistics::{Data, OrderStatistics};

pub use config::{parse_config, ExperimentConfig, CONFIG_KEYS, PRESETS};

use crate::algorithms::{run_algorithm, RunOptions};
use crate::error::{CodaError, Result};
use crate::problems::build_problem;
use crate::types::{AlgoConfig, IterationRecord, RunResult};

pub const CSV_HEADER: &str =
    "seed,t,samples_used,objective,grad_norm_sq,stationary_gap_sq,moreau_grad_sq,tracking_err_sq,wall_nanos";

/// One finished (or failed) seed.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub result: Result<RunResult>,
}

fn run_options(config: &ExperimentConfig) -> RunOptions {
    RunOptions {
        start: None,
        measures: config.measures,
        measure_every: config.measure_every,
        inner_spec: config.inner_spec,
        moreau_lambda: config.moreau_lambda,
        keep_points: false,
    }
}

/// Runs every seed of `config`. Seeds execute in parallel on `threads`
/// workers (all cores when `None`) and the output keeps the seed order. A
/// failing seed reports its error without stopping the others.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<SeedRun>> {
    let problem = build_problem(&config.problem, &config.problem_params)?;
    let opts = run_options(config);
    let (algo, base) = (config.algo, &config.algo_config);
    let one = |seed: u64| {
        let cfg = AlgoConfig { seed, ..base.clone() };
        SeedRun { seed, result: run_algorithm(algo, problem.as_ref(), &cfg, &opts) }
    };
    let seeds = &config.seeds;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CodaError::Parameter("threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CodaError::Parameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| seeds.par_iter().map(|&s| one(s)).collect()))
}

/// Same as [`run_experiment`] on the calling thread only.
pub fn run_experiment_sequential(config: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    let problem = build_problem(&config.problem, &config.problem_params)?;
    let opts = run_options(config);
    Ok(config
        .seeds
        .iter()
        .map(|&seed| {
            let cfg = AlgoConfig { seed, ..config.algo_config.clone() };
            SeedRun { seed, result: run_algorithm(config.algo, problem.as_ref(), &cfg, &opts) }
        })
        .collect())
}

/// Scientific rendering with 17 significant digits, which round-trips every
/// `f64` exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// CSV text of `(seed, result)` pairs, rows sorted by `(seed, t)`.
pub fn csv_string(results: &[(u64, &RunResult)]) -> String {
    let mut rows: Vec<(u64, &IterationRecord)> =
        results.iter().flat_map(|(s, r)| r.records.iter().map(move |rec| (*s, rec))).collect();
    rows.sort_by_key(|(s, rec)| (*s, rec.t));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (seed, r) in rows {
        let _ = writeln!(
            out,
            "{seed},{},{},{},{},{},{},{},{}",
            r.t,
            r.samples_used,
            fmt_opt(r.objective),
            fmt_opt(r.grad_norm_sq),
            fmt_opt(r.stationary_gap_sq),
            fmt_opt(r.moreau_grad_sq),
            fmt_opt(r.tracking_err_sq),
            r.wall_nanos
        );
    }
    out
}

/// Writes the successful runs of an experiment as CSV.
pub fn emit_csv(runs: &[SeedRun], path: &Path) -> Result<()> {
    let ok: Vec<(u64, &RunResult)> = runs.iter().filter_map(|r| r.result.as_ref().ok().map(|res| (r.seed, res))).collect();
    std::fs::write(path, csv_string(&ok)).map_err(|source| CodaError::Io { path: path.into(), source })
}

/// Parses CSV produced by [`csv_string`] back into `(seed, record)` rows.
pub fn parse_csv(text: &str) -> Result<Vec<(u64, IterationRecord)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CodaError::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(CodaError::Data(format!("unexpected CSV header '{}'", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CodaError::Parse { line, msg: e.to_string() })?;
        let bad = |col: &str| CodaError::Parse { line, msg: format!("bad value in column {col}") };
        let int = |j: usize, col: &str| row[j].parse::<u64>().map_err(|_| bad(col));
        let opt = |j: usize, col: &str| -> Result<Option<f64>> {
            if row[j].is_empty() {
                Ok(None)
            } else {
                row[j].parse::<f64>().map(Some).map_err(|_| bad(col))
            }
        };
        let rec = IterationRecord {
            t: int(1, "t")? as usize,
            samples_used: int(2, "samples_used")?,
            objective: opt(3, "objective")?,
            grad_norm_sq: opt(4, "grad_norm_sq")?,
            stationary_gap_sq: opt(5, "stationary_gap_sq")?,
            moreau_grad_sq: opt(6, "moreau_grad_sq")?,
            tracking_err_sq: opt(7, "tracking_err_sq")?,
            wall_nanos: int(8, "wall_nanos")?,
        };
        out.push((int(0, "seed")?, rec));
    }
    Ok(out)
}

/// Median and interquartile range of one metric across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub n_seeds: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl MetricSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

type Getter = fn(&IterationRecord) -> Option<f64>;

const METRICS: [(&str, Getter); 5] = [
    ("objective", |r| r.objective),
    ("grad_norm_sq", |r| r.grad_norm_sq),
    ("stationary_gap_sq", |r| r.stationary_gap_sq),
    ("moreau_grad_sq", |r| r.moreau_grad_sq),
    ("tracking_err_sq", |r| r.tracking_err_sq),
];

/// Mean of `metric` over the last `window` fraction of the records carrying
/// it (at least one record).
pub fn final_window_mean(result: &RunResult, get: impl Fn(&IterationRecord) -> Option<f64>, window: f64) -> Option<f64> {
    let vals: Vec<f64> = result.records.iter().filter_map(get).collect();
    if vals.is_empty() {
        return None;
    }
    let n = ((vals.len() as f64 * window).ceil() as usize).clamp(1, vals.len());
    Some(vals[vals.len() - n..].iter().sum::<f64>() / n as f64)
}

/// Median and IQR across seeds of each metric's final-window mean (the last
/// tenth of the measured records). Failed seeds are skipped.
pub fn summarize(runs: &[SeedRun]) -> Vec<MetricSummary> {
    METRICS
        .iter()
        .filter_map(|(name, get)| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.result.as_ref().ok())
                .filter_map(|res| final_window_mean(res, get, 0.1))
                .collect();
            if vals.is_empty() {
                return None;
            }
            let n = vals.len();
            let mut data = Data::new(vals);
            Some(MetricSummary {
                metric: name,
                n_seeds: n,
                median: data.median(),
                q1: data.lower_quartile(),
                q3: data.upper_quartile(),
            })
        })
        .collect()
}

/// Plain-text table of [`summarize`].
pub fn emit_summary(runs: &[SeedRun]) -> String {
    let mut out = format!("{:<18} {:>6} {:>14} {:>14}\n", "metric", "seeds", "median", "iqr");
    for s in summarize(runs) {
        let _ = writeln!(out, "{:<18} {:>6} {:>14.6e} {:>14.6e}", s.metric, s.n_seeds, s.median, s.iqr());
    }
    let failed: Vec<String> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().err().map(|e| format!("seed {}: {e}", r.seed)))
        .collect();
    for f in failed {
        let _ = writeln!(out, "failed {f}");
    }
    out
}
