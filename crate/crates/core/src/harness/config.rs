//! Flat `key = value` experiment configs.
//!
//! ```text
//! # comments run to the end of the line
//! algo = coda_primal
//! problem = quad
//! problem.preset = ncsc
//! preset = ncsc
//! T = 2000
//! seeds = 0..20
//! measures = primal_grad, tracking_err
//! ```

use std::collections::BTreeMap;

use crate::algorithms::AlgoKind;
use crate::error::{CodaError, Result};
use crate::measures::{InnerSolveSpec, MeasureSet};
use crate::problems::{build_problem, ProblemParams};
use crate::types::{AlgoConfig, AlphaSchedule};

/// Keys understood by [`parse_config`] besides `problem.*`.
pub const CONFIG_KEYS: [&str; 25] = [
    "algo",
    "problem",
    "preset",
    "T",
    "K",
    "seed",
    "seeds",
    "eta_x",
    "eta_y",
    "beta",
    "M",
    "B",
    "B_tau",
    "tau",
    "alpha",
    "gamma",
    "mu_x",
    "theta_exponent",
    "z0_init_samples",
    "reinit_tracker",
    "record_timing",
    "measure_every",
    "measures",
    "moreau_lambda",
    "out",
];

/// Extra keys for the inner solver of the primal-function measures.
const SOLVER_KEYS: [&str; 2] = ["inner_max_iters", "inner_tol"];

pub const PRESETS: [&str; 3] = ["ncsc", "scnc", "wcwc"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algo: AlgoKind,
    pub problem: String,
    pub problem_params: ProblemParams,
    pub algo_config: AlgoConfig,
    pub seeds: Vec<u64>,
    pub measure_every: usize,
    pub measures: MeasureSet,
    pub moreau_lambda: Option<f64>,
    pub inner_spec: InnerSolveSpec,
    pub out_path: Option<String>,
}

impl ExperimentConfig {
    /// A validated config with defaults for everything but the essentials.
    pub fn new(algo: AlgoKind, problem: &str, t: usize) -> Result<Self> {
        let text = format!("algo = {}\nproblem = {problem}\nT = {t}\n", algo.name());
        parse_config(&text)
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Entries(BTreeMap<String, Entry>);

fn perr(line: usize, msg: impl Into<String>) -> CodaError {
    CodaError::Parse { line, msg: msg.into() }
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.0.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn line(&self, key: &str) -> usize {
        self.0.get(key).map_or(0, |e| e.line)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Result<Option<(T, usize)>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(|t| Some((t, line)))
                .map_err(|_| perr(line, format!("{key}: expected {kind}, got '{v}'"))),
        }
    }

    fn real(&mut self, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<Option<f64>> {
        match self.parsed::<f64>(key, "a number")? {
            None => Ok(None),
            Some((v, _)) if v.is_finite() && ok(v) => Ok(Some(v)),
            Some((v, line)) => Err(perr(line, format!("{key} = {v} is out of range (expected {range})"))),
        }
    }

    fn count(&mut self, key: &str, min: usize) -> Result<Option<usize>> {
        match self.parsed::<usize>(key, "a nonnegative integer")? {
            Some((v, line)) if v < min => Err(perr(line, format!("{key} must be at least {min}, got {v}"))),
            other => Ok(other.map(|(v, _)| v)),
        }
    }

    fn flag(&mut self, key: &str) -> Result<Option<bool>> {
        Ok(self.parsed::<bool>(key, "true or false")?.map(|(v, _)| v))
    }
}

fn parse_seeds(text: &str, line: usize) -> Result<Vec<u64>> {
    let bad = || perr(line, format!("seeds: expected a list like '1, 2, 3' or a range 'a..b', got '{text}'"));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(perr(line, "seeds: the list is empty"));
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(perr(line, "seeds: duplicate seed"));
    }
    Ok(seeds)
}

fn split_lines(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| perr(line, format!("expected 'key = value', got '{body}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(perr(line, "empty key"));
        }
        if v.is_empty() {
            return Err(perr(line, format!("{k}: missing value")));
        }
        let known = CONFIG_KEYS.contains(&k) || SOLVER_KEYS.contains(&k) || k.starts_with("problem.");
        if !known {
            return Err(perr(line, format!("unknown key '{k}'")));
        }
        if let Some(prev) = map.insert(k.to_string(), Entry { value: v.to_string(), line, used: false }) {
            return Err(perr(line, format!("'{k}' already set on line {}", prev.line)));
        }
    }
    Ok(Entries(map))
}

/// Parses and fully validates a config, building the problem once to check
/// that the algorithm, problem and measures fit together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut e = split_lines(text)?;
    let (algo_name, algo_line) = e.take("algo").ok_or_else(|| perr(0, "missing required key 'algo'"))?;
    let algo = AlgoKind::from_name(&algo_name).ok_or_else(|| {
        let names: Vec<&str> = AlgoKind::ALL.iter().map(|k| k.name()).collect();
        perr(algo_line, format!("unknown algorithm '{algo_name}' (expected one of {})", names.join(", ")))
    })?;
    let (problem, problem_line) = e.take("problem").ok_or_else(|| perr(0, "missing required key 'problem'"))?;
    let t = e.count("T", 0)?.ok_or_else(|| perr(0, "missing required key 'T'"))?;

    let mut params = ProblemParams::new();
    let mut param_lines = Vec::new();
    let keys: Vec<String> = e.0.keys().filter(|k| k.starts_with("problem.")).cloned().collect();
    for k in keys {
        let (v, line) = e.take(&k).expect("listed");
        params.set(&k["problem.".len()..], &v);
        param_lines.push((k, line));
    }
    let built = build_problem(&problem, &params).map_err(|err| {
        let msg = err.to_string();
        let line = param_lines
            .iter()
            .find(|(k, _)| msg.contains(&format!("{k}:")) || msg.contains(&format!("{k} ")) || msg.ends_with(k.as_str()))
            .map_or(problem_line, |(_, l)| *l);
        perr(line, err.to_string())
    })?;
    algo.check_mode(built.as_ref()).map_err(|err| perr(algo_line, err.to_string()))?;

    let mut cfg = AlgoConfig { t_inner: t, ..AlgoConfig::default() };
    let mut gamma_from_rho = false;
    if let Some((preset, line)) = e.take("preset") {
        match preset.as_str() {
            "ncsc" => cfg.beta = 0.5,
            "scnc" => cfg.beta = 0.1,
            "wcwc" => {
                cfg.theta_exponent = 0.5;
                gamma_from_rho = true;
            }
            other => {
                return Err(perr(line, format!("unknown preset '{other}' (expected one of {})", PRESETS.join(", "))))
            }
        }
    }
    if gamma_from_rho {
        let rho = built.meta().rho_weak;
        if !(rho > 0.0) {
            return Err(perr(
                e.line("preset"),
                format!("preset wcwc sets gamma = 1/rho, but '{problem}' reports rho = {rho}"),
            ));
        }
        cfg.gamma = 1.0 / rho;
    }

    let pos = |v: f64| v > 0.0;
    let nonneg = |v: f64| v >= 0.0;
    if let Some(k) = e.count("K", 1)? {
        cfg.k_outer = k;
    }
    if let Some(v) = e.real("eta_x", nonneg, ">= 0")? {
        cfg.eta_x = v;
    }
    if let Some(v) = e.real("eta_y", nonneg, ">= 0")? {
        cfg.eta_y = v;
    }
    if let Some(v) = e.real("beta", |b| b > 0.0 && b <= 1.0, "(0, 1]")? {
        cfg.beta = v;
    }
    if let Some(v) = e.count("M", 1)? {
        cfg.batch_m = v;
    }
    if let Some(v) = e.count("B", 1)? {
        cfg.batch_b = v;
    }
    if let Some(v) = e.count("B_tau", 1)? {
        cfg.batch_btau = v;
    }
    if let Some(v) = e.count("tau", 1)? {
        cfg.tau = v;
    }
    if let Some((v, line)) = e.take("alpha") {
        let vals: Vec<f64> = v
            .split(',')
            .map(|s| s.trim().parse::<f64>().ok().filter(|a| a.is_finite() && *a >= 0.0))
            .collect::<Option<_>>()
            .ok_or_else(|| perr(line, format!("alpha: expected nonnegative numbers separated by commas, got '{v}'")))?;
        cfg.alpha_schedule = AlphaSchedule(vals);
    }
    if let Some(v) = e.real("gamma", pos, "> 0")? {
        cfg.gamma = v;
    }
    if let Some(v) = e.real("mu_x", nonneg, ">= 0")? {
        cfg.mu_x = v;
    }
    if let Some(v) = e.real("theta_exponent", nonneg, ">= 0")? {
        cfg.theta_exponent = v;
    }
    if let Some(v) = e.count("z0_init_samples", 1)? {
        cfg.z0_init_samples = v;
    }
    if let Some(v) = e.flag("reinit_tracker")? {
        cfg.reinit_tracker = v;
    }
    if let Some(v) = e.flag("record_timing")? {
        cfg.record_timing = v;
    }

    let seeds = match (e.take("seed"), e.take("seeds")) {
        (Some(_), Some((_, line))) => return Err(perr(line, "set either 'seed' or 'seeds', not both")),
        (Some((v, line)), None) => vec![v.parse().map_err(|_| perr(line, format!("seed: expected an integer, got '{v}'")))?],
        (None, Some((v, line))) => parse_seeds(&v, line)?,
        (None, None) => vec![0],
    };
    cfg.seed = seeds[0];

    let measure_every = e.count("measure_every", 1)?.unwrap_or(1);
    let mut measures = MeasureSet::none();
    if let Some((v, line)) = e.take("measures") {
        for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            measures.enable(name).map_err(|err| perr(line, err.to_string()))?;
        }
        measures.check_capable(built.as_ref()).map_err(|err| perr(line, err.to_string()))?;
    }
    let moreau_lambda = e.real("moreau_lambda", pos, "> 0")?;
    let mut inner_spec = InnerSolveSpec::default();
    if let Some(v) = e.count("inner_max_iters", 1)? {
        inner_spec.max_iters = v;
    }
    if let Some(v) = e.real("inner_tol", pos, "> 0")? {
        inner_spec.tol = v;
    }
    let out_path = e.take("out").map(|(v, _)| v);

    // Any remaining cross-field violation is reported at the algorithm line.
    cfg.validate().map_err(|err| perr(algo_line, err.to_string()))?;
    debug_assert!(e.0.values().all(|x| x.used));
    Ok(ExperimentConfig {
        algo,
        problem,
        problem_params: params,
        algo_config: cfg,
        seeds,
        measure_every,
        measures,
        moreau_lambda,
        inner_spec,
        out_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(err: CodaError) -> usize {
        match err {
            CodaError::Parse { line, .. } => line,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config("algo = coda_primal\nproblem = quad\nT = 50\nseed = 3\n").unwrap();
        assert_eq!(c.algo, AlgoKind::CodaPrimal);
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.algo_config, AlgoConfig { t_inner: 50, seed: 3, ..AlgoConfig::default() });
        assert_eq!(c.measure_every, 1);
        assert!(c.measures.is_empty());
    }

    #[test]
    fn mode_mismatch_points_at_algo_line() {
        let err = parse_config("problem = quad\n\nalgo = coda_dual\nT = 5\n").unwrap_err();
        assert_eq!(line_of(err), 3);
    }

    #[test]
    fn beta_out_of_range() {
        let err = parse_config("algo = coda_primal\nproblem = quad\nT = 5\nbeta = 1.5\n").unwrap_err();
        assert_eq!(line_of(err), 4);
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = parse_config("algo = coda_primal\nproblem = quad\nT = 5\nbetta = 0.1\n").unwrap_err();
        assert_eq!(line_of(err), 4);
        let err = parse_config("algo = coda_primal\nT = 5\nproblem = quad\nT = 6\n").unwrap_err();
        assert_eq!(line_of(err), 4);
        let err = parse_config("algo = coda_primal\nproblem = quad\nT = 5\nproblem.bogus = 1\n").unwrap_err();
        assert_eq!(line_of(err), 4);
    }

    #[test]
    fn missing_required_key() {
        assert!(matches!(parse_config("algo = coda_primal\nproblem = quad\n"), Err(CodaError::Parse { .. })));
    }

    #[test]
    fn presets_set_theorem_defaults() {
        let c = parse_config("algo = coda_primal\nproblem = quad\nT = 5\npreset = scnc\n").unwrap();
        assert_eq!(c.algo_config.beta, 0.1);
        let c = parse_config("algo = coda_primal\nproblem = quad\nT = 5\npreset = ncsc\nbeta = 0.3\n").unwrap();
        assert_eq!(c.algo_config.beta, 0.3);
        let c = parse_config("algo = coda_pd\nproblem = wcwc\nT = 5\npreset = wcwc\n").unwrap();
        let rho = build_problem("wcwc", &ProblemParams::new()).unwrap().meta().rho_weak;
        assert_eq!(c.algo_config.gamma, 1.0 / rho);
        assert_eq!(c.algo_config.theta_exponent, 0.5);
    }

    #[test]
    fn seeds_lists_and_ranges() {
        let c = parse_config("algo = sgda\nproblem = quad\nT = 5\nseeds = 4..7\n").unwrap();
        assert_eq!(c.seeds, vec![4, 5, 6]);
        let c = parse_config("algo = sgda\nproblem = quad\nT = 5\nseeds = 9, 2 # trailing\n").unwrap();
        assert_eq!(c.seeds, vec![9, 2]);
        assert!(parse_config("algo = sgda\nproblem = quad\nT = 5\nseeds = 1, 1\n").is_err());
    }

    #[test]
    fn incapable_measure_is_rejected() {
        let err = parse_config("algo = coda_primal\nproblem = robust_weights\nT = 5\nmeasures = primal_grad\n").unwrap_err();
        assert_eq!(line_of(err), 4);
    }
}
