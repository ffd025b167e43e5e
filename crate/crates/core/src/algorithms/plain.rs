//! Single-loop descent-ascent with a tracked inner function (CODA-Primal,
//! CODA-Dual, CODA-SCSC), its proximal outer loop (CODA-PD) and the
//! SGDA / SCGDA baselines.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use super::{start_point, tracker_input, validate_run, AlgoKind, ProximalWrap, Recorder, RunOptions, Streams};
use crate::error::{CodaError, Result};
use crate::geometry::project;
use crate::oracle::{draw_batch, draw_pairs, g_value, CompositionMode, OracleSample, Problem, SampleKind};
use crate::tracking::{moving_average_step, tracker_init, tracker_step, TrackerState};
use crate::types::{ensure_finite, AlgoConfig, PrimalDualPoint, Rng, RunResult, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Estimator {
    /// Corrected tracker `z <- (1-b)(z + g(x^t) - g(x^{t-1})) + b g(x^t)`.
    Corrected,
    /// Moving average without the correction term.
    MovingAverage,
    /// Fresh minibatch mean, no memory.
    Direct,
}

pub(crate) struct PlainState {
    pub x: Vector,
    pub y: Vector,
    pub tracker: TrackerState,
    pub samples: u64,
}

impl PlainState {
    pub fn point(&self) -> PrimalDualPoint {
        PrimalDualPoint::new(self.x.clone(), self.y.clone())
    }
}

/// Minibatch estimate of the outer-map part of `(grad_x F, grad_y F)` at the
/// tracked inner value `z`, one `(xi, zeta)` pair per term.
pub(crate) fn outer_part(
    problem: &dyn Problem,
    x: &Vector,
    y: &Vector,
    z: &Vector,
    pairs: &[(OracleSample, OracleSample)],
) -> (Vector, Vector) {
    let mut gx = Vector::zeros(x.len());
    let mut gy = Vector::zeros(y.len());
    let empty = Vector::zeros(0);
    let w = match problem.meta().mode {
        CompositionMode::OnBoth => Some(crate::types::stack(x, y)),
        _ => None,
    };
    for (xi, zeta) in pairs {
        match problem.meta().mode {
            CompositionMode::OnPrimal => {
                let jac = problem.inner_jacobian(x, xi);
                gx += jac.tr_mul(&problem.outer_grad1(z, y, Some(zeta)));
                gy += problem.outer_grad2(z, y, Some(zeta));
            }
            CompositionMode::OnDual => {
                gx += problem.outer_grad1(x, z, Some(zeta));
                let jac = problem.inner_jacobian(y, xi);
                gy += jac.tr_mul(&problem.outer_grad2(x, z, Some(zeta)));
            }
            CompositionMode::OnBoth => {
                let jac = problem.inner_jacobian(w.as_ref().expect("stacked input"), xi);
                let gw = jac.tr_mul(&problem.outer_grad1(z, &empty, Some(zeta)));
                gx += gw.rows(0, x.len());
                gy += gw.rows(x.len(), y.len());
            }
            CompositionMode::None => {
                gx += problem.outer_grad1(x, y, Some(zeta));
                gy += problem.outer_grad2(x, y, Some(zeta));
            }
        }
    }
    let n = pairs.len() as f64;
    (gx / n, gy / n)
}

/// One iteration: update the inner estimate at `(x^t, y^t)`, then take a
/// projected descent step in `x` and a projected ascent step in `y`, both
/// evaluated at `(x^t, y^t)`. `alpha` adds `alpha x^t` to the primal gradient.
pub(crate) fn plain_step(
    problem: &dyn Problem,
    config: &AlgoConfig,
    est: Estimator,
    st: &mut PlainState,
    alpha: f64,
    streams: &mut Streams,
) -> Result<()> {
    let input = tracker_input(problem.meta().mode, &st.x, &st.y);
    let batch = draw_batch(SampleKind::Inner, config.batch_m, &mut streams.tracker);
    match est {
        Estimator::Corrected => tracker_step(&mut st.tracker, problem, &input, &batch)?,
        Estimator::MovingAverage => moving_average_step(&mut st.tracker, problem, &input, &batch)?,
        Estimator::Direct => {
            st.tracker.z = g_value(problem, &input, &batch)?;
            st.tracker.prev_input = input;
        }
    }
    let pairs = draw_pairs(config.batch_b, &mut streams.grad);
    let (mut gx, mut gy) = outer_part(problem, &st.x, &st.y, &st.tracker.z, &pairs);
    gx += problem.h_grad(&st.x);
    if alpha != 0.0 {
        gx += &st.x * alpha;
    }
    gy -= problem.r_grad(&st.y);
    let x = project(problem.domain_x(), &(&st.x - gx * config.eta_x))?;
    let y = project(problem.domain_y(), &(&st.y + gy * config.eta_y))?;
    ensure_finite(&x, "primal iterate")?;
    ensure_finite(&y, "dual iterate")?;
    st.x = x;
    st.y = y;
    st.samples += (config.batch_m + config.batch_b) as u64;
    Ok(())
}

fn init_state(problem: &dyn Problem, config: &AlgoConfig, start: &PrimalDualPoint, rng: &mut Rng) -> Result<PlainState> {
    let input = tracker_input(problem.meta().mode, &start.x, &start.y);
    let tracker = tracker_init(problem, &input, config.z0_init_samples, config.beta, rng)?;
    Ok(PlainState {
        x: start.x.clone(),
        y: start.y.clone(),
        tracker,
        samples: config.z0_init_samples as u64,
    })
}

/// Shared driver of the single-loop methods: `T` plain steps, records on
/// schedule, and an output drawn uniformly from `(x^t, y^t)`, `t = 1..T`.
fn single_loop(
    kind: AlgoKind,
    problem: &dyn Problem,
    config: &AlgoConfig,
    opts: &RunOptions,
    est: Estimator,
    with_alpha: bool,
) -> Result<RunResult> {
    validate_run(kind, problem, config, opts)?;
    let start = start_point(problem, opts)?;
    let mut streams = Streams::new(config.seed);
    let mut rec = Recorder::new(problem, config, opts)?;
    let mut st = init_state(problem, config, &start, &mut streams.init)?;
    let t_max = config.t_inner;
    rec.record(0, st.samples, &start, Some(&st.tracker))?;

    // The output index comes from its own stream, so drawing it first leaves
    // the trajectory untouched and avoids storing every iterate.
    let pick = (t_max > 0).then(|| streams.output.random_range(1..=t_max));
    let mut chosen = start.clone();
    for t in 0..t_max {
        let alpha = if with_alpha { config.alpha_schedule.at(t) } else { 0.0 };
        plain_step(problem, config, est, &mut st, alpha, &mut streams)?;
        let step = t + 1;
        if Some(step) == pick {
            chosen = st.point();
        }
        if rec.due(step, step == t_max) {
            rec.record(step, st.samples, &st.point(), Some(&st.tracker))?;
        }
    }
    rec.finish(chosen, pick)
}

/// CODA-Primal: composition on `x`, corrected tracker, output sampled
/// uniformly from the iterates.
pub fn coda_primal(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    single_loop(AlgoKind::CodaPrimal, problem, config, opts, Estimator::Corrected, false)
}

/// CODA-Dual: composition on `y`; the primal gradient gains `alpha_t x^t`
/// from `config.alpha_schedule`.
pub fn coda_dual(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    single_loop(AlgoKind::CodaDual, problem, config, opts, Estimator::Corrected, true)
}

/// SGDA: the fresh minibatch mean of `g` is plugged into the outer gradient.
pub fn sgda_baseline(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    single_loop(AlgoKind::Sgda, problem, config, opts, Estimator::Direct, false)
}

/// SCGDA: moving-average inner estimate without the correction term.
pub fn scgda_baseline(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    single_loop(AlgoKind::Scgda, problem, config, opts, Estimator::MovingAverage, false)
}

fn check_both(problem: &dyn Problem) -> Result<()> {
    if problem.meta().mode != CompositionMode::OnBoth {
        return Err(CodaError::Config(format!(
            "coda_scsc needs a problem composed on_both, but '{}' is {}",
            problem.meta().name,
            problem.meta().mode.name()
        )));
    }
    Ok(())
}

/// CODA-SCSC on the regularized problem `problem_k` from `(x0, y0)`; returns
/// the last iterate `(x^T, y^T)`.
pub fn coda_scsc(
    problem_k: &ProximalWrap,
    x0: &Vector,
    y0: &Vector,
    t: usize,
    config: &AlgoConfig,
) -> Result<PrimalDualPoint> {
    check_both(problem_k)?;
    config.validate()?;
    let start = PrimalDualPoint::new(x0.clone(), y0.clone());
    let mut streams = Streams::new(config.seed);
    let mut st = init_state(problem_k, config, &start, &mut streams.init)?;
    for _ in 0..t {
        plain_step(problem_k, config, Estimator::Corrected, &mut st, 0.0, &mut streams)?;
    }
    Ok(st.point())
}

/// Standalone CODA-SCSC run anchored at the start point with weight
/// `1/gamma`, recording every inner step and returning the last iterate.
pub(crate) fn coda_scsc_run(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    validate_run(AlgoKind::CodaScsc, problem, config, opts)?;
    let start = start_point(problem, opts)?;
    let wrap = ProximalWrap::primal_dual(problem, &start, config.gamma)?;
    let mut streams = Streams::new(config.seed);
    let mut rec = Recorder::new(problem, config, opts)?;
    let mut st = init_state(&wrap, config, &start, &mut streams.init)?;
    rec.record(0, st.samples, &start, Some(&st.tracker))?;
    for t in 0..config.t_inner {
        plain_step(&wrap, config, Estimator::Corrected, &mut st, 0.0, &mut streams)?;
        if rec.due(t + 1, t + 1 == config.t_inner) {
            rec.record(t + 1, st.samples, &st.point(), Some(&st.tracker))?;
        }
    }
    rec.finish(st.point(), None)
}

/// Output weights `theta_k = (k + 1)^a`, `k = 0..K-1`.
pub fn theta_weights(k_outer: usize, exponent: f64) -> Vec<f64> {
    (0..k_outer).map(|k| ((k + 1) as f64).powf(exponent)).collect()
}

/// Draws `k` with probability `weights[k] / sum(weights)`.
pub fn sample_output_index(weights: &[f64], rng: &mut Rng) -> Result<usize> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| CodaError::Parameter(format!("invalid output weights: {e}")))?;
    Ok(dist.sample(rng))
}

/// CODA-PD: `K` rounds of CODA-SCSC on `F_k = F + 1/(2 gamma)(|x - x_k|^2 -
/// |y - y_k|^2)`, warm-started with the tracker carried across rounds unless
/// `reinit_tracker` is set. Records are taken per outer round (`t = k + 1`).
/// The output is the result of round `k*` drawn with probability
/// proportional to `(k* + 1)^theta_exponent`; `sampled_index` is `k*`.
pub fn coda_pd(problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<RunResult> {
    validate_run(AlgoKind::CodaPd, problem, config, opts)?;
    if config.k_outer == 0 {
        return Err(CodaError::Parameter("coda_pd needs at least one outer round".into()));
    }
    let start = start_point(problem, opts)?;
    let mut streams = Streams::new(config.seed);
    let mut rec = Recorder::new(problem, config, opts)?;
    let mut st = init_state(problem, config, &start, &mut streams.init)?;
    rec.record(0, st.samples, &start, Some(&st.tracker))?;

    let mut rounds = Vec::with_capacity(config.k_outer);
    for k in 0..config.k_outer {
        let anchor = st.point();
        let wrap = ProximalWrap::primal_dual(problem, &anchor, config.gamma)?;
        if config.reinit_tracker && k > 0 {
            let input = tracker_input(CompositionMode::OnBoth, &anchor.x, &anchor.y);
            st.tracker = tracker_init(&wrap, &input, config.z0_init_samples, config.beta, &mut streams.init)?;
            st.samples += config.z0_init_samples as u64;
        }
        for _ in 0..config.t_inner {
            plain_step(&wrap, config, Estimator::Corrected, &mut st, 0.0, &mut streams)?;
        }
        rounds.push(st.point());
        if rec.due(k + 1, k + 1 == config.k_outer) {
            rec.record(k + 1, st.samples, &st.point(), Some(&st.tracker))?;
        }
    }
    let k_star = sample_output_index(&theta_weights(config.k_outer, config.theta_exponent), &mut streams.output)?;
    rec.finish(rounds.swap_remove(k_star), Some(k_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::run_algorithm;
    use crate::geometry::DomainSpec;
    use crate::testing::AffineNoise;
    use crate::types::make_rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn cfg(t: usize) -> AlgoConfig {
        AlgoConfig {
            eta_x: 0.05,
            eta_y: 0.05,
            beta: 0.5,
            batch_m: 3,
            batch_b: 2,
            t_inner: t,
            k_outer: 3,
            seed: 3,
            z0_init_samples: 5,
            ..Default::default()
        }
    }

    fn start(d: usize) -> PrimalDualPoint {
        let x = Vector::from_fn(d, |i, _| 0.5 - 0.3 * i as f64);
        let y = Vector::from_fn(d, |i, _| -0.2 + 0.1 * i as f64);
        PrimalDualPoint::new(x, y)
    }

    fn opts(p: PrimalDualPoint) -> RunOptions {
        RunOptions { start: Some(p), ..Default::default() }
    }

    /// Simultaneous GDA on `F = x^T y`.
    fn gda(p0: &PrimalDualPoint, eta: f64, steps: usize) -> Vec<PrimalDualPoint> {
        let mut out = vec![p0.clone()];
        for _ in 0..steps {
            let p = out.last().unwrap();
            out.push(PrimalDualPoint::new(&p.x - &p.y * eta, &p.y + &p.x * eta));
        }
        out
    }

    fn trajectory(problem: &dyn Problem, config: &AlgoConfig, est: Estimator, alpha: f64, p0: &PrimalDualPoint) -> Vec<PrimalDualPoint> {
        let mut streams = Streams::new(config.seed);
        let mut st = init_state(problem, config, p0, &mut streams.init).unwrap();
        let mut out = vec![st.point()];
        for _ in 0..config.t_inner {
            plain_step(problem, config, est, &mut st, alpha, &mut streams).unwrap();
            out.push(st.point());
        }
        out
    }

    fn max_gap(a: &[PrimalDualPoint], b: &[PrimalDualPoint]) -> f64 {
        a.iter().zip(b).map(|(p, q)| (&p.x - &q.x).amax().max((&p.y - &q.y).amax())).fold(0.0, f64::max)
    }

    #[test]
    fn primal_and_dual_reduce_to_gda() {
        let config = cfg(100);
        let p0 = start(3);
        let reference = gda(&p0, 0.05, 100);
        let primal = AffineNoise::identity(3, 0.0);
        assert!(max_gap(&trajectory(&primal, &config, Estimator::Corrected, 0.0, &p0), &reference) <= 1e-12);
        let dual = AffineNoise::on_dual(3, 0.0);
        assert!(max_gap(&trajectory(&dual, &config, Estimator::Corrected, 0.0, &p0), &reference) <= 1e-12);

        let res = coda_primal(&primal, &config, &opts(p0.clone())).unwrap();
        let k = res.sampled_index.unwrap();
        assert!((1..=100).contains(&k));
        assert!((&res.final_point.x - &reference[k].x).amax() <= 1e-12);
    }

    #[test]
    fn zero_stepsizes_freeze_iterates() {
        let p = AffineNoise::random(3, 3, 0.7, 1);
        let config = AlgoConfig { eta_x: 0.0, eta_y: 0.0, ..cfg(20) };
        let p0 = start(3);
        let res = coda_primal(&p, &config, &opts(p0.clone())).unwrap();
        assert_eq!(res.final_point, p0);
    }

    #[test]
    fn mode_gating_grid() {
        let problems: Vec<(CompositionMode, AffineNoise)> = vec![
            (CompositionMode::OnPrimal, AffineNoise::identity(2, 0.1)),
            (CompositionMode::OnDual, AffineNoise::on_dual(2, 0.1)),
            (CompositionMode::OnBoth, AffineNoise::on_both(2, 0.1)),
            (CompositionMode::None, AffineNoise::identity(2, 0.1).with_mode(CompositionMode::None)),
        ];
        for kind in AlgoKind::ALL {
            for (mode, p) in &problems {
                let res = run_algorithm(kind, p, &cfg(2), &RunOptions::default());
                if *mode == kind.required_mode() {
                    assert!(res.is_ok(), "{kind} on {}: {res:?}", mode.name());
                } else {
                    assert!(matches!(res, Err(CodaError::Config(_))), "{kind} on {}", mode.name());
                }
            }
        }
    }

    #[test]
    fn budget_is_m_plus_b_per_step() {
        let p = AffineNoise::random(3, 3, 0.4, 2);
        for f in [coda_primal, sgda_baseline, scgda_baseline] {
            let res = f(&p, &cfg(3), &RunOptions::default()).unwrap();
            let samples: Vec<u64> = res.records.iter().map(|r| r.samples_used).collect();
            assert_eq!(samples, vec![5, 10, 15, 20]);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = AffineNoise::random(3, 3, 0.4, 2);
        let a = coda_primal(&p, &cfg(30), &RunOptions::default()).unwrap();
        let b = coda_primal(&p, &cfg(30), &RunOptions::default()).unwrap();
        assert_eq!(a, b);
        let c = coda_primal(&p, &AlgoConfig { seed: 4, ..cfg(30) }, &RunOptions::default()).unwrap();
        assert_ne!(a.final_point, c.final_point);
    }

    #[test]
    fn baseline_degenerations() {
        let noisy = AffineNoise::random(3, 3, 0.4, 2);
        let config = AlgoConfig { beta: 1.0, ..cfg(25) };
        let p0 = start(3);
        assert_eq!(
            trajectory(&noisy, &config, Estimator::MovingAverage, 0.0, &p0),
            trajectory(&noisy, &config, Estimator::Direct, 0.0, &p0)
        );
        let clean = AffineNoise::random(3, 3, 0.0, 2);
        assert_eq!(
            sgda_baseline(&clean, &cfg(25), &opts(p0.clone())).unwrap().final_point,
            coda_primal(&clean, &cfg(25), &opts(p0)).unwrap().final_point
        );
    }

    #[test]
    fn heavy_alpha_shrinks_primal_iterates() {
        let p = AffineNoise::on_dual(3, 0.2)
            .with_domains(DomainSpec::ball(Vector::zeros(3), 2.0).unwrap(), DomainSpec::unconstrained(3));
        let config = AlgoConfig { eta_x: 5e-7, ..cfg(30) };
        let traj = trajectory(&p, &config, Estimator::Corrected, 1e6, &start(3));
        let norms: Vec<f64> = traj.iter().map(|q| q.x.norm()).collect();
        // Monotone until x reaches the noise floor |grad_x f| / alpha ~ 1e-7.
        assert!(norms[1..16].windows(2).all(|w| w[1] < w[0]), "{norms:?}");
        assert!(norms.iter().skip(1).all(|n| *n < 1e-6 || *n <= norms[1]));
    }

    #[test]
    fn scsc_finds_regularized_bilinear_saddle() {
        let base = AffineNoise::on_both(2, 0.0);
        let gamma = 2.0;
        let p0 = start(2);
        let wrap = ProximalWrap::primal_dual(&base, &p0, gamma).unwrap();
        let config = AlgoConfig { eta_x: 0.01, eta_y: 0.01, gamma, ..cfg(5000) };
        let out = coda_scsc(&wrap, &p0.x, &p0.y, 5000, &config).unwrap();
        // Saddle of x^T y + |x - x0|^2/(2g) - |y - y0|^2/(2g): per coordinate
        // x/g + y = x0/g and x - y/g = -y0/g.
        let a = nalgebra::Matrix2::new(1.0 / gamma, 1.0, 1.0, -1.0 / gamma);
        let inv = a.try_inverse().unwrap();
        for i in 0..2 {
            let rhs = nalgebra::Vector2::new(p0.x[i] / gamma, -p0.y[i] / gamma);
            let s = inv * rhs;
            assert!((out.x[i] - s[0]).abs() < 1e-3 && (out.y[i] - s[1]).abs() < 1e-3, "{out:?} vs {s:?}");
        }
    }

    #[test]
    fn scsc_degenerate_cases() {
        let base = AffineNoise::on_both(2, 0.3);
        let p0 = start(2);
        let wrap = ProximalWrap::primal_dual(&base, &p0, 1.0).unwrap();
        assert_eq!(coda_scsc(&wrap, &p0.x, &p0.y, 0, &cfg(0)).unwrap(), p0);

        let far = ProximalWrap::primal_dual(&base, &start(2), 1e300).unwrap();
        let config = cfg(1);
        let wrapped = coda_scsc(&far, &p0.x, &p0.y, 1, &config).unwrap();
        let plain = trajectory(&base, &config, Estimator::Corrected, 0.0, &p0).pop().unwrap();
        assert!((wrapped.x - plain.x).amax() < 1e-12 && (wrapped.y - plain.y).amax() < 1e-12);
    }

    #[test]
    fn pd_single_round_outputs_first_round() {
        let base = AffineNoise::on_both(2, 0.3);
        let res = coda_pd(&base, &AlgoConfig { k_outer: 1, ..cfg(10) }, &RunOptions::default()).unwrap();
        assert_eq!(res.sampled_index, Some(0));
        assert_eq!(res.records.len(), 2);
        assert!(coda_pd(&base, &AlgoConfig { k_outer: 0, ..cfg(10) }, &RunOptions::default()).is_err());
    }

    #[test]
    fn output_weights_follow_theta() {
        let w = theta_weights(4, 0.5);
        let total: f64 = w.iter().sum();
        let mut rng = make_rng(9, 0);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_output_index(&w, &mut rng).unwrap()] += 1;
        }
        let chi: f64 = counts
            .iter()
            .zip(&w)
            .map(|(&c, wi)| {
                let e = n as f64 * wi / total;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi);
        assert!(p > 0.01, "chi2 = {chi}, p = {p}");
    }
}
