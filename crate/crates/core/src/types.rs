//! Shared numeric types, run configuration, randomness streams and trajectory records.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CodaError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Deterministic, platform-independent random stream.
pub type Rng = ChaCha8Rng;

/// Fails with a numeric error if any entry is NaN or infinite.
pub fn ensure_finite(v: &Vector, context: &str) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(CodaError::Numeric(context.to_string()))
    }
}

/// Independent purposes a master seed fans out into. Each purpose owns its
/// own ChaCha stream so that, e.g., changing the gradient batch size does not
/// perturb the tracker draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Tracker = 1,
    Gradient = 2,
    Output = 3,
    TrackerInit = 4,
    VrInner = 5,
    VrDual = 6,
    VrPrimal = 7,
    Measure = 8,
    Problem = 9,
    Probe = 10,
    Start = 11,
}

/// Builds the stream identified by `(seed, stream)`. Identical pairs yield
/// identical sequences on every platform.
pub fn make_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    make_rng(seed, stream as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: Vector,
    pub y: Vector,
}

impl PrimalDualPoint {
    pub fn new(x: Vector, y: Vector) -> Self {
        Self { x, y }
    }

    /// The stacked variable `w = [x; y]`.
    pub fn stacked(&self) -> Vector {
        stack(&self.x, &self.y)
    }

    pub fn from_stacked(w: &Vector, d_x: usize) -> Self {
        let x = w.rows(0, d_x).into_owned();
        let y = w.rows(d_x, w.len() - d_x).into_owned();
        Self { x, y }
    }

    pub fn distance(&self, other: &PrimalDualPoint) -> f64 {
        ((&self.x - &other.x).norm_squared() + (&self.y - &other.y).norm_squared()).sqrt()
    }
}

pub fn stack(a: &Vector, b: &Vector) -> Vector {
    let mut w = Vector::zeros(a.len() + b.len());
    w.rows_mut(0, a.len()).copy_from(a);
    w.rows_mut(a.len(), b.len()).copy_from(b);
    w
}

/// Regularizer schedule `alpha_t` for the dual-composition algorithm. The last
/// entry repeats once `t` runs past the explicit values; an empty schedule is
/// identically zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlphaSchedule(pub Vec<f64>);

impl AlphaSchedule {
    pub fn zero() -> Self {
        Self(Vec::new())
    }

    pub fn constant(a: f64) -> Self {
        Self(vec![a])
    }

    pub fn at(&self, t: usize) -> f64 {
        match self.0.last() {
            None => 0.0,
            Some(last) => *self.0.get(t).unwrap_or(last),
        }
    }
}

/// Stepsizes, batch sizes and schedule parameters shared by every algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub eta_x: f64,
    pub eta_y: f64,
    pub beta: f64,
    /// Tracker batch `M`.
    pub batch_m: usize,
    /// Gradient batch `B`.
    pub batch_b: usize,
    /// Refresh batch `B_tau` of the variance-reduced estimators.
    pub batch_btau: usize,
    /// Epoch length of the variance-reduced estimators.
    pub tau: usize,
    pub alpha_schedule: AlphaSchedule,
    /// Proximal weight of the primal-dual outer loop (`F_k` adds `1/(2 gamma)` quadratics).
    pub gamma: f64,
    /// Proximal weight of the variance-reduced primal outer loop.
    pub mu_x: f64,
    /// Inner iterations.
    pub t_inner: usize,
    /// Outer iterations.
    pub k_outer: usize,
    /// Exponent of the output weights `theta_k = (k + 1)^a`.
    pub theta_exponent: f64,
    pub seed: u64,
    pub z0_init_samples: usize,
    /// Re-initialize the tracker at every outer round instead of carrying `z`.
    pub reinit_tracker: bool,
    /// Fill `wall_nanos`; off by default so trajectories stay byte-identical.
    pub record_timing: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            eta_x: 0.01,
            eta_y: 0.05,
            beta: 0.5,
            batch_m: 16,
            batch_b: 16,
            batch_btau: 256,
            tau: 16,
            alpha_schedule: AlphaSchedule::zero(),
            gamma: 1.0,
            mu_x: 0.0,
            t_inner: 100,
            k_outer: 10,
            theta_exponent: 0.5,
            seed: 0,
            z0_init_samples: 64,
            reinit_tracker: false,
            record_timing: false,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CodaError::Parameter(msg));
        // Zero stepsizes are accepted: they freeze the iterates, which is a
        // useful degenerate run.
        for (name, v) in [("eta_x", self.eta_x), ("eta_y", self.eta_y)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        for (name, v) in [
            ("batch_M", self.batch_m),
            ("batch_B", self.batch_b),
            ("batch_Btau", self.batch_btau),
            ("tau", self.tau),
            ("z0_init_samples", self.z0_init_samples),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.mu_x.is_finite() && self.mu_x >= 0.0) {
            return bad(format!("mu_x must be nonnegative, got {}", self.mu_x));
        }
        if !(self.theta_exponent.is_finite() && self.theta_exponent >= 0.0) {
            return bad(format!(
                "theta exponent must be nonnegative, got {}",
                self.theta_exponent
            ));
        }
        if self.alpha_schedule.0.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alpha schedule entries must be finite and nonnegative".into());
        }
        Ok(())
    }
}

/// One measured point of a trajectory. Metrics that were not computed are
/// `None`, never zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationRecord {
    pub t: usize,
    pub samples_used: u64,
    pub grad_norm_sq: Option<f64>,
    pub stationary_gap_sq: Option<f64>,
    pub moreau_grad_sq: Option<f64>,
    pub tracking_err_sq: Option<f64>,
    pub objective: Option<f64>,
    pub wall_nanos: u64,
}

impl IterationRecord {
    pub fn at(t: usize, samples_used: u64) -> Self {
        Self { t, samples_used, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub final_point: PrimalDualPoint,
    /// Index chosen by weighted output sampling, when the algorithm samples one.
    pub sampled_index: Option<usize>,
    /// Iterates at the recorded steps, filled only when the run asks for them.
    pub points: Vec<PrimalDualPoint>,
}

impl RunResult {
    pub fn new(final_point: PrimalDualPoint) -> Self {
        Self { records: Vec::new(), final_point, sampled_index: None, points: Vec::new() }
    }

    /// Appends a record, enforcing strictly increasing `t` and nondecreasing
    /// sample counts.
    pub fn push(&mut self, rec: IterationRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.t <= last.t {
                return Err(CodaError::Ordering(format!(
                    "record t={} does not follow t={}",
                    rec.t, last.t
                )));
            }
            if rec.samples_used < last.samples_used {
                return Err(CodaError::Ordering(format!(
                    "samples_used decreased from {} to {} at t={}",
                    last.samples_used, rec.samples_used, rec.t
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }
}

/// Functional form of [`RunResult::push`].
pub fn record_append(mut result: RunResult, rec: IterationRecord) -> Result<RunResult> {
    result.push(rec)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn draws(seed: u64, stream: u64) -> Vec<u64> {
        let mut rng = make_rng(seed, stream);
        (0..100).map(|_| rng.next_u64()).collect()
    }

    #[test]
    fn rng_is_deterministic() {
        assert_eq!(draws(42, 0), draws(42, 0));
    }

    #[test]
    fn rng_streams_and_seeds_differ() {
        let base = draws(42, 0);
        let other_stream = draws(42, 1);
        let other_seed = draws(43, 0);
        assert!(base.iter().zip(&other_stream).all(|(a, b)| a != b));
        assert!(base.iter().zip(&other_seed).all(|(a, b)| a != b));
    }

    #[test]
    fn rng_regression_fixture() {
        // Frozen from the first run; guards against silent changes of the
        // generator or its seeding.
        let d = draws(42, 0);
        assert_eq!(d[0], RNG_42_0_FIRST);
        let d1 = draws(42, 1);
        assert_eq!(d1[0], RNG_42_1_FIRST);
    }

    const RNG_42_0_FIRST: u64 = 12578764544318200737;
    const RNG_42_1_FIRST: u64 = 13222472167927179408;

    #[test]
    fn record_append_ordering() {
        let p = PrimalDualPoint::new(Vector::zeros(1), Vector::zeros(1));
        let r = record_append(RunResult::new(p.clone()), IterationRecord::at(0, 0)).unwrap();
        assert_eq!(r.records.len(), 1);
        let r = record_append(r, IterationRecord::at(1, 4)).unwrap();
        assert_eq!(r.records.len(), 2);

        let r1 = record_append(RunResult::new(p.clone()), IterationRecord::at(1, 0)).unwrap();
        assert!(matches!(
            record_append(r1, IterationRecord::at(0, 0)),
            Err(CodaError::Ordering(_))
        ));

        let r2 = record_append(RunResult::new(p), IterationRecord::at(0, 10)).unwrap();
        assert!(matches!(
            record_append(r2, IterationRecord::at(1, 9)),
            Err(CodaError::Ordering(_))
        ));
    }

    #[test]
    fn alpha_schedule_repeats_last() {
        let s = AlphaSchedule(vec![1.0, 2.0]);
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(5), 2.0);
        assert_eq!(AlphaSchedule::zero().at(3), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = AlgoConfig::default();
        assert!(c.validate().is_ok());
        c.beta = 1.5;
        assert!(c.validate().is_err());
        c.beta = 1.0;
        c.batch_m = 0;
        assert!(c.validate().is_err());
        c.batch_m = 1;
        c.eta_x = 0.0;
        assert!(c.validate().is_ok());
    }
}
