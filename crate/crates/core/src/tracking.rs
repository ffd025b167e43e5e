//! Inner-function estimators: the corrected auxiliary variable `z`, its
//! epoch-refreshed variance-reduced version, and the extrapolated dual
//! gradient accumulator.

use crate::error::{shape_err, CodaError, Result};
use crate::oracle::{draw_batch, g_value, inner_mean_value, OracleSample, Problem, SampleKind};
use crate::types::{ensure_finite, Rng, Vector};

/// Running estimate `z` of `E[g(input)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub z: Vector,
    /// The input the last update evaluated `g` at (`x^{t-1}` from the point of
    /// view of the next update).
    pub prev_input: Vector,
    pub beta: f64,
    pub initialized: bool,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(CodaError::Parameter(format!("beta must lie in (0, 1], got {beta}")))
    }
}

/// `z^0 = g(input0; batch of n_samples)`, with `x^{-1} = x^0`.
pub fn tracker_init(
    problem: &dyn Problem,
    input0: &Vector,
    n_samples: usize,
    beta: f64,
    rng: &mut Rng,
) -> Result<TrackerState> {
    if n_samples == 0 {
        return Err(CodaError::Precondition("tracker initialization needs at least one sample".into()));
    }
    check_beta(beta)?;
    let batch = draw_batch(SampleKind::Inner, n_samples, rng);
    let z = g_value(problem, input0, &batch)?;
    Ok(TrackerState { z, prev_input: input0.clone(), beta, initialized: true })
}

impl TrackerState {
    /// A tracker started from a known value, e.g. the exact `g(x^0)`.
    pub fn from_value(z: Vector, input0: Vector, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { z, prev_input: input0, beta, initialized: true })
    }

    fn check(&self, input: &Vector) -> Result<()> {
        if !self.initialized {
            return Err(CodaError::Precondition("tracker used before initialization".into()));
        }
        if input.len() != self.prev_input.len() {
            return Err(shape_err("tracker input", self.prev_input.len(), input.len()));
        }
        Ok(())
    }
}

/// `(1 - beta)(z + g_curr - g_prev) + beta * anchor`.
pub fn corrected_mix(z: &Vector, g_curr: &Vector, g_prev: &Vector, anchor: &Vector, beta: f64) -> Vector {
    (z + (g_curr - g_prev)) * (1.0 - beta) + anchor * beta
}

/// One corrected update
/// `z <- (1 - beta)(z + g(curr; M) - g(prev; M)) + beta g(curr; M)`, where the
/// same minibatch evaluates both inputs.
pub fn tracker_step(
    state: &mut TrackerState,
    problem: &dyn Problem,
    input_curr: &Vector,
    batch: &[OracleSample],
) -> Result<()> {
    state.check(input_curr)?;
    let g_curr = g_value(problem, input_curr, batch)?;
    let g_prev = g_value(problem, &state.prev_input, batch)?;
    let z = corrected_mix(&state.z, &g_curr, &g_prev, &g_curr, state.beta);
    ensure_finite(&z, "tracker_step")?;
    state.z = z;
    state.prev_input = input_curr.clone();
    Ok(())
}

/// Moving average `z <- (1 - beta) z + beta g(curr; M)` without the correction
/// term (the SCGD-style estimator).
pub fn moving_average_step(
    state: &mut TrackerState,
    problem: &dyn Problem,
    input_curr: &Vector,
    batch: &[OracleSample],
) -> Result<()> {
    state.check(input_curr)?;
    let g_curr = g_value(problem, input_curr, batch)?;
    let z = &state.z * (1.0 - state.beta) + g_curr * state.beta;
    ensure_finite(&z, "moving_average_step")?;
    state.z = z;
    state.prev_input = input_curr.clone();
    Ok(())
}

/// `|z - E[g(prev_input)]|^2`: the error of the current estimate against the
/// input it was last updated at.
pub fn tracking_error(state: &TrackerState, problem: &dyn Problem) -> Result<f64> {
    let exact = inner_mean_value(problem, &state.prev_input)?;
    Ok((&state.z - exact).norm_squared())
}

/// Tracker with a recursive running estimate `g^t` that is re-anchored by a
/// large batch every `tau` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct VrTrackerState {
    pub base: TrackerState,
    pub g_run: Vector,
    pub steps_since_refresh: usize,
    pub tau: usize,
}

impl VrTrackerState {
    pub fn new(base: TrackerState, tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(CodaError::Parameter("tau must be positive".into()));
        }
        let g_run = base.z.clone();
        Ok(Self { base, g_run, steps_since_refresh: 0, tau })
    }

    /// Whether the next step is a refresh step.
    pub fn refresh_due(&self) -> bool {
        self.steps_since_refresh == 0
    }
}

/// One variance-reduced step; returns whether it was a refresh.
///
/// Refresh: `g^t = g(curr; B_tau)`; otherwise `g^t = g^{t-1} + g(curr; I) -
/// g(prev; I)`. In both cases `z` mixes toward the updated `g^t`, which keeps
/// the estimate exact on noiseless problems. The caller sizes `batch`
/// accordingly.
pub fn vr_tracker_step(
    state: &mut VrTrackerState,
    problem: &dyn Problem,
    input_curr: &Vector,
    batch: &[OracleSample],
) -> Result<bool> {
    state.base.check(input_curr)?;
    let refresh = state.refresh_due();
    let g_curr = g_value(problem, input_curr, batch)?;
    let g_prev = g_value(problem, &state.base.prev_input, batch)?;
    if refresh {
        state.g_run = g_curr.clone();
    } else {
        state.g_run += &g_curr - &g_prev;
    }
    let z = corrected_mix(&state.base.z, &g_curr, &g_prev, &state.g_run, state.base.beta);
    ensure_finite(&z, "vr_tracker_step")?;
    ensure_finite(&state.g_run, "vr_tracker_step")?;
    state.base.z = z;
    state.base.prev_input = input_curr.clone();
    state.steps_since_refresh = (state.steps_since_refresh + 1) % state.tau;
    Ok(refresh)
}

/// `q^t` and `q^{t-1}` of the extrapolated dual estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGradAccumulator {
    pub q_curr: Vector,
    pub q_prev: Vector,
}

impl DualGradAccumulator {
    /// Both slots set to `q`, so the first extrapolation returns the first
    /// estimate unchanged.
    pub fn primed(q: Vector) -> Self {
        Self { q_prev: q.clone(), q_curr: q }
    }
}

/// On refresh `q <- fresh`, otherwise `q <- q + fresh` (the caller passes the
/// differenced increment). Returns `2 q^t - q^{t-1}` and shifts the slots.
pub fn dual_accum_step(acc: &mut DualGradAccumulator, fresh: &Vector, is_refresh: bool) -> Result<Vector> {
    if fresh.len() != acc.q_curr.len() {
        return Err(shape_err("dual accumulator", acc.q_curr.len(), fresh.len()));
    }
    let new = if is_refresh { fresh.clone() } else { &acc.q_curr + fresh };
    let extrapolated = &new * 2.0 - &acc.q_curr;
    ensure_finite(&extrapolated, "dual_accum_step")?;
    acc.q_prev = std::mem::replace(&mut acc.q_curr, new);
    Ok(extrapolated)
}
