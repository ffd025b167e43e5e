//! Synthetic problem suite covering every composition mode and curvature
//! regime, with known structure for exact tests.

mod auc;
mod constraint;
mod mixture;
mod quad;
mod robust;
mod wcwc;

use std::collections::BTreeMap;

use nalgebra::SymmetricEigen;
use rand_distr::{Distribution, StandardNormal};

pub use auc::{make_auc_toy, AucProblem, AucToySpec};
pub use constraint::{make_constraint_penalty, ConstraintPenalty, ConstraintSpec};
pub use mixture::{make_mixture_weights, MixtureSpec, MixtureWeights};
pub use quad::{make_quad, make_quad_saddle, QuadProblem, QuadSpec};
pub use robust::{make_robust_weights, RobustSpec, RobustWeights};
pub use wcwc::{make_wcwc_toy, WcwcSpec, WcwcToy};

use crate::error::{CodaError, Result};
use crate::oracle::{CompositionMode, OracleSample, Problem};
use crate::types::{make_rng, Matrix, Rng, Stream, Vector};

/// Names accepted by [`build_problem`].
pub const PROBLEM_NAMES: [&str; 6] = ["quad", "auc", "robust_weights", "mixture_weights", "constraint_penalty", "wcwc"];

/// Standard normal vector expanded from a sample token.
pub(crate) fn normals(sample: &OracleSample, n: usize) -> Vector {
    let mut rng = sample.rng();
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)))
}

/// Haar-ish random orthogonal matrix from the QR factor of a Gaussian draw.
pub(crate) fn orthogonal(d: usize, rng: &mut Rng) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn sym_extremes(m: &Matrix) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    (eig.min(), eig.max())
}

pub(crate) fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `key = value` parameters of a suite problem. Every key must be consumed;
/// [`ProblemParams::finish`] rejects the rest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemParams {
    values: BTreeMap<String, String>,
    used: std::cell::RefCell<Vec<String>>,
}

impl ProblemParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, &value.to_string());
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().push(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T, kind: &str) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CodaError::Config(format!("problem.{key}: expected {kind}, got '{v}'"))),
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.parsed(key, default, "a number")?;
        if !v.is_finite() {
            return Err(CodaError::Config(format!("problem.{key} must be finite")));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        self.parsed(key, default, "a nonnegative integer")
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64> {
        self.parsed(key, default, "a nonnegative integer")
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool> {
        self.parsed(key, default, "true or false")
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    /// Errors on keys no getter asked for.
    pub fn finish(&self, problem: &str) -> Result<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(k)) {
            Some(k) => Err(CodaError::Config(format!("unknown parameter problem.{k} for '{problem}'"))),
            None => Ok(()),
        }
    }
}

/// Builds a suite problem by name. The instance is drawn from the `seed`
/// parameter (default 0), independent of any run seed, so paired runs share
/// one instance.
pub fn build_problem(name: &str, params: &ProblemParams) -> Result<Box<dyn Problem>> {
    let seed = params.u64("seed", 0)?;
    let mut rng = make_rng(seed, Stream::Problem as u64);
    let problem: Box<dyn Problem> = match name {
        "quad" => {
            let d = params.usize("d", 5)?;
            let sigma = params.f64("sigma", 1.0)?;
            let preset = params.string("preset", "ncsc");
            let spec = match preset.as_str() {
                "ncsc" => QuadSpec::ncsc(d, sigma, &mut rng)?,
                "unit" => QuadSpec::unit(d, sigma),
                "scsc_primal" => QuadSpec::scsc(CompositionMode::OnPrimal, d, sigma, &mut rng)?,
                "scsc_dual" => QuadSpec::scsc(CompositionMode::OnDual, d, sigma, &mut rng)?,
                "scsc_both" => QuadSpec::scsc(CompositionMode::OnBoth, d, sigma, &mut rng)?,
                other => {
                    return Err(CodaError::Config(format!(
                        "unknown quad preset '{other}' (expected ncsc, unit, scsc_primal, scsc_dual, scsc_both)"
                    )))
                }
            };
            Box::new(make_quad(spec)?)
        }
        "auc" => {
            let d = AucToySpec::default();
            let spec = AucToySpec {
                n: params.usize("n", d.n)?,
                d: params.usize("d", d.d)?,
                imratio: params.f64("imratio", d.imratio)?,
                alpha_inner: params.f64("alpha_inner", d.alpha_inner)?,
                separation: params.f64("separation", d.separation)?,
                theta_max: params.f64("theta_max", d.theta_max)?,
            };
            Box::new(make_auc_toy(&spec, &mut rng)?)
        }
        "robust_weights" => {
            let d = RobustSpec::default();
            let spec = RobustSpec {
                n_tasks: params.usize("n_tasks", d.n_tasks)?,
                d: params.usize("d", d.d)?,
                eta_inner: params.f64("eta_inner", d.eta_inner)?,
                noise_sigma: params.f64("sigma", d.noise_sigma)?,
                first_order: params.bool("first_order", d.first_order)?,
            };
            Box::new(RobustWeights::random(&spec, &mut rng)?)
        }
        "mixture_weights" => {
            let d = MixtureSpec::default();
            let spec = MixtureSpec {
                n_sources: params.usize("n_sources", d.n_sources)?,
                d: params.usize("d", d.d)?,
                c_smooth: params.f64("c", d.c_smooth)?,
                lambda: params.f64("lambda", d.lambda)?,
                noise_sigma: params.f64("sigma", d.noise_sigma)?,
                radius: params.f64("radius", d.radius)?,
                heterogeneity: params.f64("heterogeneity", d.heterogeneity)?,
            };
            Box::new(MixtureWeights::random(&spec, &mut rng)?)
        }
        "constraint_penalty" => {
            let d = ConstraintSpec::default();
            let spec = ConstraintSpec {
                d: params.usize("d", d.d)?,
                k: params.usize("k", d.k)?,
                lambda_max: params.f64("lambda_max", d.lambda_max)?,
                tightness: params.f64("tightness", d.tightness)?,
                noise_sigma: params.f64("sigma", d.noise_sigma)?,
            };
            Box::new(ConstraintPenalty::random(&spec, &mut rng)?)
        }
        "wcwc" => {
            let d = WcwcSpec::default();
            let spec = WcwcSpec {
                d: params.usize("d", d.d)?,
                scale: params.f64("scale", d.scale)?,
                delta: params.f64("delta", d.delta)?,
                stretch: params.f64("stretch", d.stretch)?,
                noise_sigma: params.f64("sigma", d.noise_sigma)?,
            };
            Box::new(WcwcToy::random(&spec, &mut rng)?)
        }
        other => {
            return Err(CodaError::Config(format!(
                "unknown problem '{other}' (expected one of {})",
                PROBLEM_NAMES.join(", ")
            )))
        }
    };
    params.finish(name)?;
    Ok(problem)
}
