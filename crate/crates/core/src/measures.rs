//! Stationarity measures evaluated on the full-expectation objective.
//!
//! Every measure goes through [`full_gradient`], never through an algorithm's
//! minibatches, so measurement noise is independent of optimization noise.

use crate::error::{CodaError, Result};
use crate::geometry::{project, DomainSpec};
use crate::oracle::{full_gradient, objective, CompositionMode, Problem};
use crate::types::{make_rng, PrimalDualPoint, Rng, Stream, Vector};

/// Budget for the inner maximization and proximal subproblems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolveSpec {
    pub max_iters: usize,
    /// Stop once the projected-gradient mapping norm drops below `tol`.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for InnerSolveSpec {
    fn default() -> Self {
        Self { max_iters: 20_000, tol: 1e-9, restarts: 1 }
    }
}

impl InnerSolveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(CodaError::Parameter(format!("inner tolerance must be positive, got {}", self.tol)));
        }
        if self.restarts == 0 {
            return Err(CodaError::Parameter("at least one restart is required".into()));
        }
        Ok(())
    }
}

/// A measured scalar together with whether its subproblem converged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalValue {
    pub value: f64,
    pub y_star: Vector,
    pub certified: bool,
}

fn measure_rng() -> Rng {
    make_rng(0x6d65_6173_7572_6573, Stream::Measure as u64)
}

fn step_size(problem: &dyn Problem) -> f64 {
    1.0 / problem.meta().smoothness.max(1e-12)
}

/// Projected gradient ascent on `y -> F(x, y)`; returns the final iterate and
/// the norm of its projected-gradient mapping.
fn ascend(problem: &dyn Problem, x: &Vector, mut y: Vector, spec: &InnerSolveSpec) -> Result<(Vector, f64)> {
    let s = step_size(problem);
    let dom = problem.domain_y();
    let mut residual = f64::INFINITY;
    for _ in 0..=spec.max_iters {
        let (_, gy) = full_gradient(problem, &PrimalDualPoint::new(x.clone(), y.clone()))?;
        let next = project(dom, &(&y + gy * s))?;
        residual = (&next - &y).norm() / s;
        if residual <= spec.tol {
            break;
        }
        y = next;
    }
    Ok((y, residual))
}

fn random_start(dom: &DomainSpec, rng: &mut Rng) -> Vector {
    crate::oracle::random_point(dom, rng)
}

/// `Phi(x) = max_y F(x, y)` by projected gradient ascent from the domain
/// center (or `warm`) plus `restarts - 1` random starts.
pub fn primal_value_from(
    problem: &dyn Problem,
    x: &Vector,
    spec: &InnerSolveSpec,
    warm: Option<&Vector>,
) -> Result<PrimalValue> {
    spec.validate()?;
    let dom = problem.domain_y();
    let mut rng = measure_rng();
    let mut best: Option<PrimalValue> = None;
    for r in 0..spec.restarts {
        let start = match (r, warm) {
            (0, Some(w)) => project(dom, w)?,
            (0, None) => dom.center(),
            _ => random_start(dom, &mut rng),
        };
        let (y, residual) = ascend(problem, x, start, spec)?;
        let value = objective(problem, &PrimalDualPoint::new(x.clone(), y.clone()))?;
        let cand = PrimalValue { value, y_star: y, certified: residual <= spec.tol };
        if best.as_ref().is_none_or(|b| cand.value > b.value) {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn primal_value(problem: &dyn Problem, x: &Vector, spec: &InnerSolveSpec) -> Result<PrimalValue> {
    primal_value_from(problem, x, spec, None)
}

/// `|grad Phi(x)|^2 = |grad_x F(x, y*(x))|^2`.
pub fn primal_grad_norm_sq(problem: &dyn Problem, x: &Vector, spec: &InnerSolveSpec) -> Result<Measured> {
    primal_grad_norm_sq_from(problem, x, spec, None).map(|(m, _)| m)
}

/// As [`primal_grad_norm_sq`], warm-started; also returns the maximizer.
pub fn primal_grad_norm_sq_from(
    problem: &dyn Problem,
    x: &Vector,
    spec: &InnerSolveSpec,
    warm: Option<&Vector>,
) -> Result<(Measured, Vector)> {
    let pv = primal_value_from(problem, x, spec, warm)?;
    let (gx, _) = full_gradient(problem, &PrimalDualPoint::new(x.clone(), pv.y_star.clone()))?;
    Ok((Measured { value: gx.norm_squared(), certified: pv.certified }, pv.y_star))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoreauResult {
    /// `|x - x_hat|^2 / lambda^2`, the squared envelope gradient norm.
    pub grad_norm_sq: f64,
    pub x_hat: Vector,
    /// `Phi(x_hat) + |x_hat - x|^2 / (2 lambda)`.
    pub envelope_value: f64,
    pub certified: bool,
}

/// Moreau envelope stationarity `|grad Phi_lambda(x)|^2` via projected
/// gradient descent on `x' -> Phi(x') + |x' - x|^2 / (2 lambda)`, with `Phi`
/// evaluated by the inner ascent.
pub fn moreau_grad_norm_sq(
    problem: &dyn Problem,
    x: &Vector,
    lambda: f64,
    spec: &InnerSolveSpec,
) -> Result<MoreauResult> {
    moreau_from(problem, x, lambda, spec, None)
}

pub(crate) fn moreau_from(
    problem: &dyn Problem,
    x: &Vector,
    lambda: f64,
    spec: &InnerSolveSpec,
    warm_y: Option<&Vector>,
) -> Result<MoreauResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CodaError::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    spec.validate()?;
    let meta = problem.meta();
    let l = meta.smoothness;
    let l_phi = if meta.mu_sc_y > 0.0 { l * (1.0 + l / meta.mu_sc_y) } else { l };
    let s = 1.0 / (1.0 / lambda + l_phi);
    let dom = problem.domain_x();
    // Tighter inner solves than the outer tolerance keep the envelope
    // gradient consistent.
    let inner = InnerSolveSpec { tol: spec.tol * 0.1, ..*spec };

    let mut xh = project(dom, x)?;
    let mut y = warm_y.cloned();
    let mut certified = false;
    for _ in 0..=spec.max_iters {
        let ys = primal_value_from(problem, &xh, &inner, y.as_ref())?.y_star;
        let (gx, _) = full_gradient(problem, &PrimalDualPoint::new(xh.clone(), ys.clone()))?;
        y = Some(ys);
        let grad = gx + (&xh - x) / lambda;
        let next = project(dom, &(&xh - grad * s))?;
        let residual = (&next - &xh).norm() / s;
        if residual <= spec.tol {
            certified = true;
            break;
        }
        xh = next;
    }
    let pv = primal_value_from(problem, &xh, &inner, y.as_ref())?;
    let d = &xh - x;
    Ok(MoreauResult {
        grad_norm_sq: d.norm_squared() / (lambda * lambda),
        envelope_value: pv.value + d.norm_squared() / (2.0 * lambda),
        x_hat: xh,
        certified: certified && pv.certified,
    })
}

/// Squared norm of the stacked projected-gradient mapping
/// `((x - P_X(x - eta_x grad_x F)) / eta_x, (y - P_Y(y + eta_y grad_y F)) / eta_y)`.
pub fn stationary_gap_sq(problem: &dyn Problem, point: &PrimalDualPoint, eta_x: f64, eta_y: f64) -> Result<f64> {
    for (name, e) in [("eta_x", eta_x), ("eta_y", eta_y)] {
        if !(e > 0.0 && e.is_finite()) {
            return Err(CodaError::Parameter(format!("{name} must be positive, got {e}")));
        }
    }
    let (gx, gy) = full_gradient(problem, point)?;
    let px = project(problem.domain_x(), &(&point.x - gx * eta_x))?;
    let py = project(problem.domain_y(), &(&point.y + gy * eta_y))?;
    let a = (&point.x - px) / eta_x;
    let b = (&point.y - py) / eta_y;
    Ok(a.norm_squared() + b.norm_squared())
}

/// Projected-gradient-mapping norm with a common stepsize, used as the
/// stationarity proxy for problems composed on both blocks.
pub fn wcwc_stationarity_proxy(problem: &dyn Problem, point: &PrimalDualPoint, eta: f64) -> Result<f64> {
    if problem.meta().mode != CompositionMode::OnBoth {
        return Err(CodaError::UnsupportedMode(format!(
            "the stationarity proxy needs composition on both blocks, problem '{}' is {}",
            problem.meta().name,
            problem.meta().mode.name()
        )));
    }
    Ok(stationary_gap_sq(problem, point, eta, eta)?.sqrt())
}

/// `<(grad_x F, -grad_y F)(w), w - w*>` at one point.
pub fn mvi_inner_product(problem: &dyn Problem, w: &PrimalDualPoint, w_star: &PrimalDualPoint) -> Result<f64> {
    let (gx, gy) = full_gradient(problem, w)?;
    Ok(gx.dot(&(&w.x - &w_star.x)) - gy.dot(&(&w.y - &w_star.y)))
}

/// Minimum of the Minty inner product over `n_probes` uniform in-domain points.
pub fn mvi_residual(
    problem: &dyn Problem,
    w_star: &PrimalDualPoint,
    n_probes: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_probes == 0 {
        return Err(CodaError::Precondition("n_probes must be at least 1".into()));
    }
    let (dx, dy) = (problem.domain_x(), problem.domain_y());
    if !(dx.is_bounded() && dy.is_bounded()) {
        return Err(CodaError::Capability("MVI probing needs bounded domains".into()));
    }
    let mut min = f64::INFINITY;
    for _ in 0..n_probes {
        let w = PrimalDualPoint::new(dx.sample_uniform(rng)?, dy.sample_uniform(rng)?);
        min = min.min(mvi_inner_product(problem, &w, w_star)?);
    }
    Ok(min)
}

/// Which metrics to fill into trajectory records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeasureSet {
    pub objective: bool,
    pub primal_grad: bool,
    pub moreau: bool,
    pub stationary_gap: bool,
    /// Stored squared in the `stationary_gap_sq` column, with `eta = eta_x`.
    pub wcwc_proxy: bool,
    pub tracking_err: bool,
}

impl MeasureSet {
    pub const NAMES: [&'static str; 6] =
        ["objective", "primal_grad", "moreau", "stationary_gap", "wcwc_proxy", "tracking_err"];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::none()
    }

    /// Enables the measure called `name`.
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "objective" => self.objective = true,
            "primal_grad" => self.primal_grad = true,
            "moreau" => self.moreau = true,
            "stationary_gap" => self.stationary_gap = true,
            "wcwc_proxy" => self.wcwc_proxy = true,
            "tracking_err" => self.tracking_err = true,
            other => {
                return Err(CodaError::Config(format!(
                    "unknown measure '{other}' (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Rejects measures the problem cannot support.
    pub fn check_capable(&self, problem: &dyn Problem) -> Result<()> {
        let meta = problem.meta();
        if (self.primal_grad || self.moreau) && !(meta.mu_sc_y > 0.0) {
            return Err(CodaError::Capability(format!(
                "primal-function measures need a strongly concave dual; problem '{}' has mu_sc_y = {}",
                meta.name, meta.mu_sc_y
            )));
        }
        if self.wcwc_proxy && meta.mode != CompositionMode::OnBoth {
            return Err(CodaError::Capability(format!(
                "wcwc_proxy needs composition on both blocks; problem '{}' is {}",
                meta.name,
                meta.mode.name()
            )));
        }
        if self.wcwc_proxy && self.stationary_gap {
            return Err(CodaError::Config("wcwc_proxy and stationary_gap share one column; pick one".into()));
        }
        if (self.tracking_err || self.objective || self.primal_grad || self.moreau || self.stationary_gap)
            && !meta.has_closed_form_g
            && meta.mc_samples == 0
            && meta.mode != CompositionMode::None
        {
            return Err(CodaError::Capability(format!(
                "problem '{}' cannot evaluate its inner expectation",
                meta.name
            )));
        }
        Ok(())
    }
}

/// Fills the point-based metrics of a record, carrying a warm start for the
/// inner maximization between consecutive calls.
pub struct Measurer<'a> {
    problem: &'a dyn Problem,
    set: MeasureSet,
    spec: InnerSolveSpec,
    lambda: f64,
    eta: (f64, f64),
    warm_y: Option<Vector>,
}

impl<'a> Measurer<'a> {
    /// `lambda` defaults to `1 / (2 L)`.
    pub fn new(
        problem: &'a dyn Problem,
        set: MeasureSet,
        spec: InnerSolveSpec,
        lambda: Option<f64>,
        eta: (f64, f64),
    ) -> Result<Self> {
        set.check_capable(problem)?;
        spec.validate()?;
        let lambda = lambda.unwrap_or(0.5 / problem.meta().smoothness);
        Ok(Self { problem, set, spec, lambda, eta, warm_y: None })
    }

    pub fn set(&self) -> &MeasureSet {
        &self.set
    }

    pub fn fill(&mut self, point: &PrimalDualPoint, rec: &mut crate::types::IterationRecord) -> Result<()> {
        let p = self.problem;
        if self.set.objective {
            rec.objective = Some(objective(p, point)?);
        }
        if self.set.primal_grad {
            let (m, y) = primal_grad_norm_sq_from(p, &point.x, &self.spec, self.warm_y.as_ref())?;
            rec.grad_norm_sq = Some(m.value);
            self.warm_y = Some(y);
        }
        if self.set.moreau {
            let r = moreau_from(p, &point.x, self.lambda, &self.spec, self.warm_y.as_ref())?;
            rec.moreau_grad_sq = Some(r.grad_norm_sq);
        }
        // Stepsizes of zero are legal for the algorithms but not for the gap.
        let eta_x = if self.eta.0 > 0.0 { self.eta.0 } else { 1.0 };
        let eta_y = if self.eta.1 > 0.0 { self.eta.1 } else { 1.0 };
        if self.set.stationary_gap {
            rec.stationary_gap_sq = Some(stationary_gap_sq(p, point, eta_x, eta_y)?);
        }
        if self.set.wcwc_proxy {
            let proxy = wcwc_stationarity_proxy(p, point, eta_x)?;
            rec.stationary_gap_sq = Some(proxy * proxy);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{OracleSample, ProblemMeta, DEFAULT_MC_SAMPLES};
    use crate::testing::{AffineNoise, Bilinear};
    use crate::types::Matrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// `F(x, y) = a/2 |x|^2 + x^T y - c/2 |y|^2` without composition.
    struct Decoupled {
        meta: ProblemMeta,
        a: f64,
        c: f64,
        coupling: f64,
        dx: DomainSpec,
        dy: DomainSpec,
    }

    impl Decoupled {
        fn new(d: usize, a: f64, coupling: f64, c: f64) -> Self {
            Self {
                meta: ProblemMeta {
                    name: "decoupled".into(),
                    d_x: d,
                    d_y: d,
                    d_z: 0,
                    mode: CompositionMode::None,
                    smoothness: a.abs().max(c).max(1.0) + coupling.abs(),
                    mu_sc_x: a.max(0.0),
                    mu_sc_y: c,
                    rho_weak: (-a).max(0.0),
                    sigma: 0.0,
                    has_true_saddle: a > 0.0,
                    has_closed_form_g: true,
                    mc_samples: DEFAULT_MC_SAMPLES,
                },
                a,
                c,
                coupling,
                dx: DomainSpec::unconstrained(d),
                dy: DomainSpec::unconstrained(d),
            }
        }
    }

    impl Problem for Decoupled {
        fn meta(&self) -> &ProblemMeta {
            &self.meta
        }
        fn domain_x(&self) -> &DomainSpec {
            &self.dx
        }
        fn domain_y(&self) -> &DomainSpec {
            &self.dy
        }
        fn inner(&self, _: &Vector, _: &OracleSample) -> Vector {
            unreachable!()
        }
        fn inner_jacobian(&self, _: &Vector, _: &OracleSample) -> Matrix {
            unreachable!()
        }
        fn outer_value(&self, x: &Vector, y: &Vector, _: Option<&OracleSample>) -> f64 {
            0.5 * self.a * x.norm_squared() + self.coupling * x.dot(y) - 0.5 * self.c * y.norm_squared()
        }
        fn outer_grad1(&self, x: &Vector, y: &Vector, _: Option<&OracleSample>) -> Vector {
            x * self.a + y * self.coupling
        }
        fn outer_grad2(&self, x: &Vector, y: &Vector, _: Option<&OracleSample>) -> Vector {
            x * self.coupling - y * self.c
        }
    }

    #[test]
    fn primal_value_of_concave_quadratic() {
        // Phi(x) = 1/2 |x|^2, y*(x) = x.
        let p = Decoupled::new(2, 0.0, 1.0, 1.0);
        let pv = primal_value(&p, &v(&[1.0, 1.0]), &InnerSolveSpec { tol: 1e-10, ..Default::default() }).unwrap();
        assert!((pv.value - 1.0).abs() < 1e-8);
        assert!((pv.y_star - v(&[1.0, 1.0])).amax() < 1e-8);
        assert!(pv.certified);
    }

    #[test]
    fn primal_value_on_single_point_domain() {
        let mut p = Decoupled::new(2, 0.0, 1.0, 1.0);
        let y0 = v(&[0.5, -2.0]);
        p.dy = DomainSpec::boxed(y0.clone(), y0.clone()).unwrap();
        let x = v(&[0.3, 0.7]);
        let pv = primal_value(&p, &x, &InnerSolveSpec::default()).unwrap();
        let direct = objective(&p, &PrimalDualPoint::new(x, y0.clone())).unwrap();
        assert_eq!(pv.value, direct);
        assert_eq!(pv.y_star, y0);
    }

    #[test]
    fn primal_grad_of_decoupled_quadratic() {
        // F = 1/2|x|^2 - 1/2|y|^2: |grad Phi|^2 = |x|^2.
        let p = Decoupled::new(3, 1.0, 0.0, 1.0);
        let x = v(&[0.4, -1.2, 2.0]);
        let m = primal_grad_norm_sq(&p, &x, &InnerSolveSpec::default()).unwrap();
        assert!((m.value - x.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn primal_grad_matches_fd_of_primal_value() {
        let p = Decoupled::new(2, -0.3, 1.3, 2.0);
        let spec = InnerSolveSpec { tol: 1e-12, ..Default::default() };
        let x = v(&[0.7, -0.4]);
        let pv = primal_value(&p, &x, &spec).unwrap();
        let (gx, _) = full_gradient(&p, &PrimalDualPoint::new(x.clone(), pv.y_star)).unwrap();
        let fd = crate::oracle::fd_gradient(|u| primal_value(&p, u, &spec).unwrap().value, &x);
        assert!((&gx - &fd).amax() / fd.amax().max(1.0) < 1e-4);
    }

    #[test]
    fn moreau_of_convex_quadratic() {
        // Phi = 1/2|x|^2 (a = 1, no coupling), lambda = 1: x_hat = x / 2.
        let p = Decoupled::new(2, 1.0, 0.0, 1.0);
        let x = v(&[2.0, -1.0]);
        let r = moreau_grad_norm_sq(&p, &x, 1.0, &InnerSolveSpec { tol: 1e-11, ..Default::default() }).unwrap();
        assert!((r.x_hat - &x / 2.0).amax() < 1e-9);
        assert!((r.grad_norm_sq - x.norm_squared() / 4.0).abs() < 1e-9);
        assert!(r.certified);
    }

    #[test]
    fn moreau_gradient_matches_fd_of_envelope() {
        let p = Decoupled::new(2, -0.2, 1.0, 2.0);
        let spec = InnerSolveSpec { tol: 1e-11, ..Default::default() };
        let lambda = 1.0 / (2.0 * p.meta.smoothness);
        let x = v(&[0.9, -0.5]);
        let r = moreau_grad_norm_sq(&p, &x, lambda, &spec).unwrap();
        let grad = (&x - &r.x_hat) / lambda;
        let fd = crate::oracle::fd_gradient(|u| moreau_grad_norm_sq(&p, u, lambda, &spec).unwrap().envelope_value, &x);
        assert!((&grad - &fd).amax() / fd.amax().max(1.0) < 1e-3);
    }

    #[test]
    fn gap_with_inactive_projections_is_gradient_norm() {
        let p = AffineNoise::with_regularizers(2, 0.5, v(&[1.0, 3.0]));
        let pt = PrimalDualPoint::new(v(&[0.3, -0.1]), v(&[1.0, 2.0]));
        let (gx, gy) = full_gradient(&p, &pt).unwrap();
        let expect = gx.norm_squared() + gy.norm_squared();
        let a = stationary_gap_sq(&p, &pt, 0.1, 0.2).unwrap();
        let b = stationary_gap_sq(&p, &pt, 1.0, 2.0).unwrap();
        assert!((a - expect).abs() < 1e-12 * expect.max(1.0));
        assert!((b - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn gap_ignores_outward_gradient_on_boundary() {
        // F = x^T y on [-1, 1] boxes. At x = (-1, -1), y = (1, 1) descent pushes
        // x out of the box, so only the dual block contributes.
        let p = Bilinear::on_boxes(2, 1.0);
        let pt = PrimalDualPoint::new(v(&[-1.0, -1.0]), v(&[1.0, 1.0]));
        let (gx, _) = full_gradient(&p, &pt).unwrap();
        assert!(gx.iter().all(|g| *g > 0.0));
        let gap = stationary_gap_sq(&p, &pt, 0.5, 0.5).unwrap();
        assert!((gap - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wcwc_proxy_at_bilinear_saddle_and_consistency() {
        let p = AffineNoise::on_both(2, 0.0);
        let origin = PrimalDualPoint::new(Vector::zeros(2), Vector::zeros(2));
        assert_eq!(wcwc_stationarity_proxy(&p, &origin, 0.3).unwrap(), 0.0);
        let pt = PrimalDualPoint::new(v(&[0.2, 0.4]), v(&[-0.3, 0.9]));
        let proxy = wcwc_stationarity_proxy(&p, &pt, 0.3).unwrap();
        let gap = stationary_gap_sq(&p, &pt, 0.3, 0.3).unwrap();
        assert!((proxy * proxy - gap).abs() <= 1e-12 * gap.max(1.0));
        let primal = AffineNoise::identity(2, 0.0);
        assert!(matches!(
            wcwc_stationarity_proxy(&primal, &origin, 0.3),
            Err(CodaError::UnsupportedMode(_))
        ));
    }

    #[test]
    fn mvi_on_monotone_bilinear() {
        let p = Bilinear::on_boxes(3, 1.0);
        let origin = PrimalDualPoint::new(Vector::zeros(3), Vector::zeros(3));
        let mut rng = make_rng(3, Stream::Probe as u64);
        assert!(mvi_residual(&p, &origin, 1000, &mut rng).unwrap() >= -1e-12);

        // With w* a far corner the product is x^T y* - y^T x*, negative
        // wherever x = -y*.
        let corner = PrimalDualPoint::new(Vector::from_element(3, 1.0), Vector::from_element(3, 1.0));
        assert!(mvi_residual(&p, &corner, 1000, &mut rng).unwrap() < 0.0);
        assert!(matches!(mvi_residual(&p, &origin, 0, &mut rng), Err(CodaError::Precondition(_))));
        let unbounded = Bilinear::new(3);
        assert!(matches!(mvi_residual(&unbounded, &origin, 5, &mut rng), Err(CodaError::Capability(_))));
    }
}
