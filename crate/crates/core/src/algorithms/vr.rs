//! Variance-reduced CODA-SCSC+ and its proximal outer loop CODA-Primal+.

use super::{start_point, validate_run, AlgoKind, ProximalWrap, Recorder, RunOptions, Streams};
use crate::error::{CodaError, Result};
use crate::geometry::project;
use crate::oracle::{draw_batch, draw_pairs, CompositionMode, OracleSample, Problem, SampleKind};
use crate::tracking::{dual_accum_step, tracker_init, vr_tracker_step, DualGradAccumulator, VrTrackerState};
use crate::types::{ensure_finite, AlgoConfig, PrimalDualPoint, Rng, RunResult, Vector};

type Pairs = [(OracleSample, OracleSample)];

/// `mean grad_2 f(z, y; zeta)`.
fn dual_part(problem: &dyn Problem, y: &Vector, z: &Vector, pairs: &Pairs) -> Vector {
    let mut g = Vector::zeros(y.len());
    for (_, zeta) in pairs {
        g += problem.outer_grad2(z, y, Some(zeta));
    }
    g / pairs.len() as f64
}

/// `mean grad g(x; xi)^T grad_1 f(z, y; zeta)`.
fn primal_part(problem: &dyn Problem, x: &Vector, y: &Vector, z: &Vector, pairs: &Pairs) -> Vector {
    let mut g = Vector::zeros(x.len());
    for (xi, zeta) in pairs {
        g += problem.inner_jacobian(x, xi).tr_mul(&problem.outer_grad1(z, y, Some(zeta)));
    }
    g / pairs.len() as f64
}

/// `y+ = P_Y(y + eta (g - grad r(y+)))`. Exact when `r` is a separable
/// quadratic, one fixed-point sweep otherwise.
fn implicit_dual_step(problem: &dyn Problem, y: &Vector, g: &Vector, eta: f64) -> Result<Vector> {
    let inner = match problem.r_affine() {
        Some((d, o)) => Vector::from_fn(y.len(), |i, _| (y[i] + eta * (g[i] - o[i])) / (1.0 + eta * d[i])),
        None => {
            let guess = y + (g - problem.r_grad(y)) * eta;
            y + (g - problem.r_grad(&guess)) * eta
        }
    };
    project(problem.domain_y(), &inner)
}

/// State of one CODA-SCSC+ call. The tracker survives across calls; the
/// recursive gradient estimates do not.
pub(crate) struct VrRun {
    pub tracker: VrTrackerState,
    acc: Option<DualGradAccumulator>,
    gx_run: Vector,
    x_prev: Vector,
    y_prev: Vector,
    pub samples: u64,
}

impl VrRun {
    fn new(tracker: VrTrackerState, samples: u64) -> Self {
        Self {
            tracker,
            acc: None,
            gx_run: Vector::zeros(0),
            x_prev: Vector::zeros(0),
            y_prev: Vector::zeros(0),
            samples,
        }
    }

    /// Starts a new inner call: the next step refreshes every estimator.
    fn restart(&mut self) {
        self.tracker.steps_since_refresh = 0;
        self.acc = None;
    }
}

fn init_run(problem: &dyn Problem, config: &AlgoConfig, x0: &Vector, rng: &mut Rng) -> Result<VrRun> {
    let base = tracker_init(problem, x0, config.z0_init_samples, config.beta, rng)?;
    Ok(VrRun::new(VrTrackerState::new(base, config.tau)?, config.z0_init_samples as u64))
}

/// One CODA-SCSC+ iteration: tracker at `x^t`, extrapolated dual estimate and
/// implicit dual step, then the primal step at `y^{t+1}`.
fn vr_step(
    problem: &dyn Problem,
    config: &AlgoConfig,
    run: &mut VrRun,
    x: &mut Vector,
    y: &mut Vector,
    streams: &mut Streams,
) -> Result<()> {
    let refresh = run.tracker.refresh_due();
    let n = if refresh { config.batch_btau } else { config.batch_b };
    let z_prev = run.tracker.base.z.clone();
    let batch = draw_batch(SampleKind::Inner, n, &mut streams.vr_inner);
    vr_tracker_step(&mut run.tracker, problem, x, &batch)?;
    let z = run.tracker.base.z.clone();

    let pairs = draw_pairs(n, &mut streams.vr_dual);
    let mut inc = dual_part(problem, y, &z, &pairs);
    if !refresh {
        inc -= dual_part(problem, &run.y_prev, &z_prev, &pairs);
    }
    let acc = run.acc.get_or_insert_with(|| DualGradAccumulator::primed(inc.clone()));
    let gy = dual_accum_step(acc, &inc, refresh)?;
    let y_new = implicit_dual_step(problem, y, &gy, config.eta_y)?;

    let pairs = draw_pairs(n, &mut streams.vr_primal);
    let fresh = primal_part(problem, x, &y_new, &z, &pairs);
    if refresh {
        run.gx_run = fresh;
    } else {
        run.gx_run += fresh - primal_part(problem, &run.x_prev, y, &z_prev, &pairs);
    }
    let x_new = project(problem.domain_x(), &(&*x - (&run.gx_run + problem.h_grad(x)) * config.eta_x))?;
    ensure_finite(&x_new, "primal iterate")?;
    ensure_finite(&y_new, "dual iterate")?;

    run.x_prev = std::mem::replace(x, x_new);
    run.y_prev = std::mem::replace(y, y_new);
    run.samples += 3 * n as u64;
    Ok(())
}

/// `T` CODA-SCSC+ steps from `start`; `after` sees every iterate. Returns the
/// average of `(x^t, y^t)`, `t = 1..T`, or `start` when `T = 0`.
fn vr_round(
    problem: &dyn Problem,
    config: &AlgoConfig,
    run: &mut VrRun,
    start: &PrimalDualPoint,
    streams: &mut Streams,
    mut after: impl FnMut(usize, &VrRun, &PrimalDualPoint) -> Result<()>,
) -> Result<PrimalDualPoint> {
    run.restart();
    let t_max = config.t_inner;
    if t_max == 0 {
        return Ok(start.clone());
    }
    let (mut x, mut y) = (start.x.clone(), start.y.clone());
    let mut sum_x = Vector::zeros(x.len());
    let mut sum_y = Vector::zeros(y.len());
    for s in 0..t_max {
        vr_step(problem, config, run, &mut x, &mut y, streams)?;
        sum_x += &x;
        sum_y += &y;
        after(s + 1, run, &PrimalDualPoint::new(x.clone(), y.clone()))?;
    }
    let n = t_max as f64;
    Ok(PrimalDualPoint::new(sum_x / n, sum_y / n))
}

fn check_primal(problem: &dyn Problem) -> Result<()> {
    if problem.meta().mode != CompositionMode::OnPrimal {
        return Err(CodaError::Config(format!(
            "coda_scsc_plus needs a problem composed on_primal, but '{}' is {}",
            problem.meta().name,
            problem.meta().mode.name()
        )));
    }
    Ok(())
}

/// CODA-SCSC+ on the regularized problem `problem_k` from `(x0, y0)`; returns
/// the average of the `T` iterates.
pub fn coda_scsc_plus(
    problem_k: &ProximalWrap,
    x0: &Vector,
    y0: &Vector,
    t: usize,
    config: &AlgoConfig,
) -> Result<PrimalDualPoint> {
    check_primal(problem_k)?;
    let config = AlgoConfig { t_inner: t, ..config.clone() };
    config.validate()?;
    let mut streams = Streams::new(config.seed);
    let mut run = init_run(problem_k, &config, x0, &mut streams.init)?;
    let start = PrimalDualPoint::new(x0.clone(), y0.clone());
    vr_round(problem_k, &config, &mut run, &start, &mut streams, |_, _, _| Ok(()))
}

/// Standalone CODA-SCSC+ run anchored at the start point with weight `mu_x`.
pub(crate) fn coda_scsc_plus_run(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    validate_run(AlgoKind::CodaScscPlus, problem, config, opts)?;
    let start = start_point(problem, opts)?;
    let wrap = ProximalWrap::primal(problem, &start.x, config.mu_x)?;
    let mut streams = Streams::new(config.seed);
    let mut rec = Recorder::new(problem, config, opts)?;
    let mut run = init_run(&wrap, config, &start.x, &mut streams.init)?;
    rec.record(0, run.samples, &start, Some(&run.tracker.base))?;
    let t_max = config.t_inner;
    let out = vr_round(&wrap, config, &mut run, &start, &mut streams, |t, run, p| {
        if rec.due(t, t == t_max) {
            rec.record(t, run.samples, p, Some(&run.tracker.base))?;
        }
        Ok(())
    })?;
    rec.finish(out, None)
}

/// CODA-Primal+: `K` rounds of CODA-SCSC+ on `F_k = F + mu_x/2 |x - x_k|^2`,
/// each warm-started at the previous round's output with the tracker carried
/// over. Records use a global step counter `k T + s` and measure the inner
/// iterates on the unregularized problem. Returns `(x_K, y_K)`.
pub fn coda_primal_plus(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    validate_run(AlgoKind::CodaPrimalPlus, problem, config, opts)?;
    let start = start_point(problem, opts)?;
    let mut streams = Streams::new(config.seed);
    let mut rec = Recorder::new(problem, config, opts)?;
    let mut run = init_run(problem, config, &start.x, &mut streams.init)?;
    rec.record(0, run.samples, &start, Some(&run.tracker.base))?;

    let t_max = config.t_inner;
    let total = config.k_outer * t_max;
    let mut point = start;
    for k in 0..config.k_outer {
        let wrap = ProximalWrap::primal(problem, &point.x, config.mu_x)?;
        if config.reinit_tracker && k > 0 {
            let base = tracker_init(&wrap, &point.x, config.z0_init_samples, config.beta, &mut streams.init)?;
            run.tracker = VrTrackerState::new(base, config.tau)?;
            run.samples += config.z0_init_samples as u64;
        }
        let offset = k * t_max;
        point = vr_round(&wrap, config, &mut run, &point, &mut streams, |s, run, p| {
            let t = offset + s;
            if rec.due(t, t == total) {
                rec.record(t, run.samples, p, Some(&run.tracker.base))?;
            }
            Ok(())
        })?;
    }
    rec.finish(point, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MeasureSet;
    use crate::oracle::{full_gradient, inner_mean_value};
    use crate::testing::{AffineNoise, QuadraticInner};

    fn cfg(t: usize, tau: usize) -> AlgoConfig {
        AlgoConfig {
            eta_x: 0.05,
            eta_y: 0.1,
            beta: 0.5,
            batch_m: 4,
            batch_b: 4,
            batch_btau: 32,
            tau,
            t_inner: t,
            k_outer: 1,
            seed: 7,
            z0_init_samples: 8,
            ..Default::default()
        }
    }

    fn noiseless() -> QuadraticInner {
        QuadraticInner::random(3, 4, 0.0, 11)
    }

    #[test]
    fn noiseless_matches_exact_gradient_recursion() {
        let p = noiseless();
        let x0 = Vector::from_element(4, 0.3);
        let y0 = p.default_start().y;
        let config = cfg(40, 5);
        let wrap = ProximalWrap::primal(&p, &x0, 0.0).unwrap();
        let out = coda_scsc_plus(&wrap, &x0, &y0, 40, &config).unwrap();

        // Exact-gradient reference with the same extrapolation and implicit step.
        let (mut x, mut y) = (x0.clone(), y0.clone());
        let mut q_prev: Option<Vector> = None;
        let (mut sx, mut sy) = (Vector::zeros(4), Vector::zeros(y.len()));
        for _ in 0..40 {
            let z = inner_mean_value(&p, &x).unwrap();
            let q = p.outer_grad2(&z, &y, None);
            let gy = &q * 2.0 - q_prev.as_ref().unwrap_or(&q);
            q_prev = Some(q);
            let y_new = implicit_dual_step(&p, &y, &gy, config.eta_y).unwrap();
            let jac = p.inner_mean_jacobian(&x).unwrap();
            let gx = jac.tr_mul(&p.outer_grad1(&z, &y_new, None)) + p.h_grad(&x);
            x -= gx * config.eta_x;
            y = y_new;
            sx += &x;
            sy += &y;
        }
        assert!((out.x - sx / 40.0).amax() < 1e-12);
        assert!((out.y - sy / 40.0).amax() < 1e-12);
    }

    #[test]
    fn noiseless_epoch_length_is_irrelevant() {
        let p = noiseless();
        let x0 = Vector::from_element(4, -0.2);
        let y0 = p.default_start().y;
        let wrap = ProximalWrap::primal(&p, &x0, 1.0).unwrap();
        let a = coda_scsc_plus(&wrap, &x0, &y0, 25, &cfg(25, 1)).unwrap();
        let b = coda_scsc_plus(&wrap, &x0, &y0, 25, &cfg(25, 5)).unwrap();
        assert!((a.x - b.x).amax() < 1e-12);
        assert!((a.y - b.y).amax() < 1e-12);
    }

    #[test]
    fn tau_one_refreshes_every_step() {
        let p = AffineNoise::random(3, 3, 0.5, 2);
        let config = cfg(3, 1);
        let res = run_plus(&p, &config, 3);
        // 3 estimators, B_tau each, every step.
        let samples: Vec<u64> = res.records.iter().map(|r| r.samples_used).collect();
        assert_eq!(samples, vec![8, 8 + 96, 8 + 192, 8 + 288]);
    }

    fn run_plus(p: &dyn Problem, config: &AlgoConfig, _t: usize) -> RunResult {
        let opts = RunOptions::with_measures(MeasureSet::none(), 1);
        coda_scsc_plus_run(p, config, &opts).unwrap()
    }

    #[test]
    fn budget_counts_refresh_and_plain_steps() {
        let p = AffineNoise::random(3, 3, 0.5, 2);
        let res = run_plus(&p, &cfg(3, 2), 3);
        let samples: Vec<u64> = res.records.iter().map(|r| r.samples_used).collect();
        assert_eq!(samples, vec![8, 8 + 96, 8 + 96 + 12, 8 + 96 + 12 + 96]);
    }

    #[test]
    fn zero_steps_return_start() {
        let p = AffineNoise::random(3, 3, 0.5, 2);
        let start = PrimalDualPoint::new(Vector::from_element(3, 0.4), Vector::from_element(3, -0.1));
        let opts = RunOptions { start: Some(start.clone()), ..Default::default() };
        let res = coda_primal_plus(&p, &AlgoConfig { t_inner: 0, k_outer: 1, ..cfg(0, 2) }, &opts).unwrap();
        assert_eq!(res.final_point, start);
    }

    #[test]
    fn single_unregularized_round_equals_scsc_plus() {
        let p = QuadraticInner::random(3, 4, 0.3, 5);
        let opts = RunOptions::with_measures(MeasureSet { objective: true, ..MeasureSet::none() }, 1);
        let config = AlgoConfig { mu_x: 0.0, k_outer: 1, ..cfg(12, 4) };
        let a = coda_primal_plus(&p, &config, &opts).unwrap();
        let b = coda_scsc_plus_run(&p, &config, &opts).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_point, b.final_point);
    }

    #[test]
    fn primal_plus_reduces_gradient_on_noiseless_problem() {
        let p = AffineNoise::random(3, 3, 0.0, 4);
        let config = AlgoConfig { mu_x: 1.0, k_outer: 20, ..cfg(20, 4) };
        let start = p.default_start();
        let res = coda_primal_plus(&p, &config, &RunOptions::default()).unwrap();
        let g0 = full_gradient(&p, &start).unwrap();
        let g1 = full_gradient(&p, &res.final_point).unwrap();
        assert!(g1.0.norm() + g1.1.norm() < 0.1 * (g0.0.norm() + g0.1.norm()));
    }

    #[test]
    fn rejects_other_modes() {
        let p = AffineNoise::on_dual(2, 0.0);
        assert!(matches!(
            coda_primal_plus(&p, &cfg(2, 2), &RunOptions::default()),
            Err(CodaError::Config(_))
        ));
    }
}
