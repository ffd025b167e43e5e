//! The problem-definition interface consumed by every algorithm and measure.
//!
//! A problem is `F(x, y) = h(x) + E_zeta[f(E_xi[g(.; xi)]; zeta)] - r(y)` where the
//! inner map `g` sits on the primal block, the dual block or the stacked pair,
//! depending on [`CompositionMode`]. Problems hold no randomness: every stochastic
//! evaluation receives an [`OracleSample`] whose token the problem expands into
//! its noise deterministically.

use rand::RngCore;

use crate::error::{shape_err, CodaError, Result};
use crate::geometry::DomainSpec;
use crate::types::{make_rng, stack, Matrix, PrimalDualPoint, Rng, Stream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompositionMode {
    /// `g` maps x-space; `f(z, y)`.
    OnPrimal,
    /// `g` maps y-space; `f(x, z)`.
    OnDual,
    /// `g` maps the stacked `(x, y)`; `f(z)`.
    OnBoth,
    /// No composition; `f(x, y)` is consumed directly.
    None,
}

impl CompositionMode {
    pub const ALL: [CompositionMode; 4] = [
        CompositionMode::OnPrimal,
        CompositionMode::OnDual,
        CompositionMode::OnBoth,
        CompositionMode::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompositionMode::OnPrimal => "on_primal",
            CompositionMode::OnDual => "on_dual",
            CompositionMode::OnBoth => "on_both",
            CompositionMode::None => "none",
        }
    }
}

/// Monte Carlo sample count used for full-expectation quantities when the
/// inner mean has no closed form.
pub const DEFAULT_MC_SAMPLES: usize = 1 << 16;

/// Structural constants of a problem. `smoothness` is a single upper bound on
/// the smoothness of `F` standing in for the separate constants of `f` and `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemMeta {
    pub name: String,
    pub d_x: usize,
    pub d_y: usize,
    pub d_z: usize,
    pub mode: CompositionMode,
    pub smoothness: f64,
    pub mu_sc_x: f64,
    pub mu_sc_y: f64,
    pub rho_weak: f64,
    pub sigma: f64,
    pub has_true_saddle: bool,
    pub has_closed_form_g: bool,
    /// Monte Carlo budget for the inner expectation when no closed form exists;
    /// zero disables the fallback.
    pub mc_samples: usize,
}

impl ProblemMeta {
    /// Dimension of the vector the inner map consumes.
    pub fn inner_input_dim(&self) -> usize {
        match self.mode {
            CompositionMode::OnPrimal => self.d_x,
            CompositionMode::OnDual => self.d_y,
            CompositionMode::OnBoth => self.d_x + self.d_y,
            CompositionMode::None => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.d_y == 0 {
            return Err(CodaError::Parameter("problem dimensions must be positive".into()));
        }
        if self.mode != CompositionMode::None && self.d_z == 0 {
            return Err(CodaError::Parameter("inner dimension must be positive".into()));
        }
        if !(self.smoothness >= self.mu_sc_x.max(self.mu_sc_y)) {
            return Err(CodaError::Parameter(format!(
                "smoothness {} below curvature bounds ({}, {})",
                self.smoothness, self.mu_sc_x, self.mu_sc_y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleKind {
    Inner,
    Outer,
}

/// A reproducible draw: the problem expands `draw` into its own noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OracleSample {
    pub kind: SampleKind,
    pub draw: u64,
}

impl OracleSample {
    /// Private generator seeded by the token, for problems that need several
    /// random numbers per sample.
    pub fn rng(&self) -> Rng {
        make_rng(self.draw, self.kind as u64)
    }

    /// Uniform index in `0..n` for finite-sum problems.
    pub fn index(&self, n: usize) -> usize {
        // Lemire's multiply-shift maps the token to [0, n) without a modulus bias
        // worth caring about at these sizes.
        ((self.draw as u128 * n as u128) >> 64) as usize
    }
}

/// Draws `n` i.i.d. samples (with replacement) from `rng`.
pub fn draw_batch(kind: SampleKind, n: usize, rng: &mut Rng) -> Vec<OracleSample> {
    (0..n).map(|_| OracleSample { kind, draw: rng.next_u64() }).collect()
}

/// Inner/outer sample pairs `(xi, zeta)` used by gradient estimators.
pub fn draw_pairs(n: usize, rng: &mut Rng) -> Vec<(OracleSample, OracleSample)> {
    (0..n)
        .map(|_| {
            let inner = OracleSample { kind: SampleKind::Inner, draw: rng.next_u64() };
            let outer = OracleSample { kind: SampleKind::Outer, draw: rng.next_u64() };
            (inner, outer)
        })
        .collect()
}

/// A stochastic compositional minimax problem.
///
/// Argument conventions for the outer map follow the composition mode:
/// `OnPrimal` evaluates `f(z, y)`, `OnDual` evaluates `f(x, z)`, `OnBoth`
/// evaluates `f(z)` (the second argument is empty) and `None` evaluates
/// `f(x, y)`. A `None` sample means the exact expectation over `zeta`.
pub trait Problem: Send + Sync {
    fn meta(&self) -> &ProblemMeta;
    fn domain_x(&self) -> &DomainSpec;
    fn domain_y(&self) -> &DomainSpec;

    /// Per-sample inner map `g(input; xi)`.
    fn inner(&self, input: &Vector, sample: &OracleSample) -> Vector;
    /// Per-sample Jacobian `d g(input; xi) / d input`, shape `d_z x input_dim`.
    fn inner_jacobian(&self, input: &Vector, sample: &OracleSample) -> Matrix;
    /// Closed-form `E[g(input; xi)]`, if available.
    fn inner_mean(&self, _input: &Vector) -> Option<Vector> {
        None
    }
    fn inner_mean_jacobian(&self, _input: &Vector) -> Option<Matrix> {
        None
    }

    fn outer_value(&self, first: &Vector, second: &Vector, sample: Option<&OracleSample>) -> f64;
    fn outer_grad1(&self, first: &Vector, second: &Vector, sample: Option<&OracleSample>) -> Vector;
    /// Gradient in the second argument; never called in `OnBoth` mode.
    fn outer_grad2(&self, first: &Vector, second: &Vector, sample: Option<&OracleSample>) -> Vector;

    fn h_value(&self, x: &Vector) -> f64 {
        let _ = x;
        0.0
    }
    fn h_grad(&self, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }
    fn r_value(&self, y: &Vector) -> f64 {
        let _ = y;
        0.0
    }
    fn r_grad(&self, y: &Vector) -> Vector {
        Vector::zeros(y.len())
    }
    /// Starting point used when a run does not supply one.
    fn default_start(&self) -> PrimalDualPoint {
        PrimalDualPoint::new(self.domain_x().center(), self.domain_y().center())
    }
    /// A known saddle (or MVI solution) of the full-expectation objective.
    fn saddle(&self) -> Option<PrimalDualPoint> {
        None
    }
    /// `(diag, offset)` with `grad r(y) = diag .* y + offset` when the dual
    /// regularizer is a separable quadratic; enables exact implicit dual steps.
    fn r_affine(&self) -> Option<(Vector, Vector)> {
        None
    }
}

fn check_batch(batch: &[OracleSample]) -> Result<()> {
    if batch.is_empty() {
        Err(CodaError::Precondition("batch must be nonempty".into()))
    } else {
        Ok(())
    }
}

fn check_inner_input(problem: &dyn Problem, input: &Vector) -> Result<()> {
    let meta = problem.meta();
    if meta.mode == CompositionMode::None {
        return Err(CodaError::UnsupportedMode("problem has no inner map".into()));
    }
    let d = meta.inner_input_dim();
    if input.len() != d {
        return Err(shape_err("inner map input", d, input.len()));
    }
    Ok(())
}

/// Minibatch mean `(1/|batch|) sum g(input; xi_i)`.
pub fn g_value(problem: &dyn Problem, input: &Vector, batch: &[OracleSample]) -> Result<Vector> {
    check_batch(batch)?;
    check_inner_input(problem, input)?;
    // Averaging deviations from the first draw keeps a noiseless batch mean
    // bitwise equal to the single-sample value.
    let base = problem.inner(input, &batch[0]);
    let mut acc = Vector::zeros(base.len());
    for s in &batch[1..] {
        acc += problem.inner(input, s) - &base;
    }
    Ok(base + acc / batch.len() as f64)
}

/// Minibatch mean of per-sample Jacobians.
pub fn g_jacobian(problem: &dyn Problem, input: &Vector, batch: &[OracleSample]) -> Result<Matrix> {
    check_batch(batch)?;
    check_inner_input(problem, input)?;
    let base = problem.inner_jacobian(input, &batch[0]);
    let mut acc = Matrix::zeros(base.nrows(), base.ncols());
    for s in &batch[1..] {
        acc += problem.inner_jacobian(input, s) - &base;
    }
    Ok(base + acc / batch.len() as f64)
}

/// Expected dimensions of the two outer arguments.
fn outer_dims(meta: &ProblemMeta) -> (usize, usize) {
    match meta.mode {
        CompositionMode::OnPrimal => (meta.d_z, meta.d_y),
        CompositionMode::OnDual => (meta.d_x, meta.d_z),
        CompositionMode::OnBoth => (meta.d_z, 0),
        CompositionMode::None => (meta.d_x, meta.d_y),
    }
}

fn check_outer_args(problem: &dyn Problem, first: &Vector, second: &Vector) -> Result<()> {
    let (d1, d2) = outer_dims(problem.meta());
    if first.len() != d1 {
        return Err(shape_err("outer first argument", d1, first.len()));
    }
    if second.len() != d2 {
        return Err(shape_err("outer second argument", d2, second.len()));
    }
    Ok(())
}

pub fn f_value(
    problem: &dyn Problem,
    first: &Vector,
    second: &Vector,
    batch: &[OracleSample],
) -> Result<f64> {
    check_batch(batch)?;
    check_outer_args(problem, first, second)?;
    let s: f64 = batch.iter().map(|s| problem.outer_value(first, second, Some(s))).sum();
    Ok(s / batch.len() as f64)
}

pub fn f_grad1(
    problem: &dyn Problem,
    first: &Vector,
    second: &Vector,
    batch: &[OracleSample],
) -> Result<Vector> {
    check_batch(batch)?;
    check_outer_args(problem, first, second)?;
    let mut acc = Vector::zeros(first.len());
    for s in batch {
        acc += problem.outer_grad1(first, second, Some(s));
    }
    Ok(acc / batch.len() as f64)
}

pub fn f_grad2(
    problem: &dyn Problem,
    first: &Vector,
    second: &Vector,
    batch: &[OracleSample],
) -> Result<Vector> {
    if problem.meta().mode == CompositionMode::OnBoth {
        return Err(CodaError::UnsupportedMode(
            "the outer map takes a single argument when composing on both blocks".into(),
        ));
    }
    check_batch(batch)?;
    check_outer_args(problem, first, second)?;
    let mut acc = Vector::zeros(second.len());
    for s in batch {
        acc += problem.outer_grad2(first, second, Some(s));
    }
    Ok(acc / batch.len() as f64)
}

pub fn h_grad(problem: &dyn Problem, x: &Vector) -> Result<Vector> {
    let d = problem.meta().d_x;
    if x.len() != d {
        return Err(shape_err("h_grad", d, x.len()));
    }
    Ok(problem.h_grad(x))
}

pub fn r_grad(problem: &dyn Problem, y: &Vector) -> Result<Vector> {
    let d = problem.meta().d_y;
    if y.len() != d {
        return Err(shape_err("r_grad", d, y.len()));
    }
    Ok(problem.r_grad(y))
}

fn mc_rng() -> Rng {
    make_rng(0x00c0_da5e_ed00_0001, Stream::Measure as u64)
}

/// `E[g(input)]` and its Jacobian: closed form when the problem provides it,
/// otherwise a fixed Monte Carlo batch drawn from a dedicated stream.
pub fn inner_expectation(problem: &dyn Problem, input: &Vector) -> Result<(Vector, Matrix)> {
    check_inner_input(problem, input)?;
    let meta = problem.meta();
    if meta.has_closed_form_g {
        if let (Some(v), Some(j)) = (problem.inner_mean(input), problem.inner_mean_jacobian(input)) {
            return Ok((v, j));
        }
    }
    if meta.mc_samples == 0 {
        return Err(CodaError::Capability(format!(
            "problem '{}' has neither a closed-form inner mean nor a Monte Carlo budget",
            meta.name
        )));
    }
    let batch = draw_batch(SampleKind::Inner, meta.mc_samples, &mut mc_rng());
    Ok((g_value(problem, input, &batch)?, g_jacobian(problem, input, &batch)?))
}

/// Exact inner mean value only (same capability rules as [`inner_expectation`]).
pub fn inner_mean_value(problem: &dyn Problem, input: &Vector) -> Result<Vector> {
    check_inner_input(problem, input)?;
    let meta = problem.meta();
    if meta.has_closed_form_g {
        if let Some(v) = problem.inner_mean(input) {
            return Ok(v);
        }
    }
    inner_expectation(problem, input).map(|(v, _)| v)
}

fn check_point(problem: &dyn Problem, point: &PrimalDualPoint) -> Result<()> {
    let m = problem.meta();
    if point.x.len() != m.d_x {
        return Err(shape_err("primal point", m.d_x, point.x.len()));
    }
    if point.y.len() != m.d_y {
        return Err(shape_err("dual point", m.d_y, point.y.len()));
    }
    Ok(())
}

/// `(grad_x F, grad_y F)` of the full-expectation objective.
pub fn full_gradient(problem: &dyn Problem, point: &PrimalDualPoint) -> Result<(Vector, Vector)> {
    check_point(problem, point)?;
    let (x, y) = (&point.x, &point.y);
    let (gx, gy) = match problem.meta().mode {
        CompositionMode::OnPrimal => {
            let (z, jac) = inner_expectation(problem, x)?;
            let gx = jac.tr_mul(&problem.outer_grad1(&z, y, None)) + problem.h_grad(x);
            let gy = problem.outer_grad2(&z, y, None) - problem.r_grad(y);
            (gx, gy)
        }
        CompositionMode::OnDual => {
            let (z, jac) = inner_expectation(problem, y)?;
            let gx = problem.outer_grad1(x, &z, None) + problem.h_grad(x);
            let gy = jac.tr_mul(&problem.outer_grad2(x, &z, None)) - problem.r_grad(y);
            (gx, gy)
        }
        CompositionMode::OnBoth => {
            let w = stack(x, y);
            let (z, jac) = inner_expectation(problem, &w)?;
            let gw = jac.tr_mul(&problem.outer_grad1(&z, &Vector::zeros(0), None));
            let split = PrimalDualPoint::from_stacked(&gw, x.len());
            (split.x + problem.h_grad(x), split.y - problem.r_grad(y))
        }
        CompositionMode::None => {
            let gx = problem.outer_grad1(x, y, None) + problem.h_grad(x);
            let gy = problem.outer_grad2(x, y, None) - problem.r_grad(y);
            (gx, gy)
        }
    };
    crate::types::ensure_finite(&gx, "full_gradient")?;
    crate::types::ensure_finite(&gy, "full_gradient")?;
    Ok((gx, gy))
}

/// `F(x, y)` of the full-expectation objective.
pub fn objective(problem: &dyn Problem, point: &PrimalDualPoint) -> Result<f64> {
    check_point(problem, point)?;
    let (x, y) = (&point.x, &point.y);
    let outer = match problem.meta().mode {
        CompositionMode::OnPrimal => {
            let z = inner_mean_value(problem, x)?;
            problem.outer_value(&z, y, None)
        }
        CompositionMode::OnDual => {
            let z = inner_mean_value(problem, y)?;
            problem.outer_value(x, &z, None)
        }
        CompositionMode::OnBoth => {
            let z = inner_mean_value(problem, &stack(x, y))?;
            problem.outer_value(&z, &Vector::zeros(0), None)
        }
        CompositionMode::None => problem.outer_value(x, y, None),
    };
    let v = problem.h_value(x) + outer - problem.r_value(y);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CodaError::Numeric("objective".into()))
    }
}

/// Central finite-difference step for an input of the given magnitude.
pub fn fd_step(input: &Vector) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + input.amax())
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&Vector) -> f64, at: &Vector) -> Vector {
    let h = fd_step(at);
    let mut out = Vector::zeros(at.len());
    let mut probe = at.clone();
    for i in 0..at.len() {
        probe[i] = at[i] + h;
        let fp = f(&probe);
        probe[i] = at[i] - h;
        let fm = f(&probe);
        probe[i] = at[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Central-difference Jacobian of a vector function (rows = outputs).
pub fn fd_jacobian(f: impl Fn(&Vector) -> Vector, at: &Vector, out_dim: usize) -> Matrix {
    let h = fd_step(at);
    let mut jac = Matrix::zeros(out_dim, at.len());
    let mut probe = at.clone();
    for j in 0..at.len() {
        probe[j] = at[j] + h;
        let fp = f(&probe);
        probe[j] = at[j] - h;
        let fm = f(&probe);
        probe[j] = at[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Mixed relative error `|a - b| / max(1, |b|)`, maximized over entries.
/// Returns the error and the (row, column) of the worst entry.
pub fn max_relative_error(analytic: &Matrix, reference: &Matrix) -> (f64, (usize, usize)) {
    let mut worst = (0.0, (0, 0));
    for i in 0..analytic.nrows() {
        for j in 0..analytic.ncols() {
            let (a, b) = (analytic[(i, j)], reference[(i, j)]);
            let e = (a - b).abs() / b.abs().max(1.0);
            if !(e <= worst.0) {
                worst = (e, (i, j));
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    /// Worst entry `(row, column)`; vectors report `(index, 0)`.
    pub worst_entry: (usize, usize),
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub problem: String,
    pub n_points: usize,
    pub tol: f64,
    pub checks: Vec<DerivativeCheck>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DerivativeCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn as_col(v: Vector) -> Matrix {
    let n = v.len();
    Matrix::from_column_slice(n, 1, v.as_slice())
}

/// Random point for derivative checks: uniform in bounded domains, standard
/// normal in unbounded ones.
pub fn random_point(domain: &DomainSpec, rng: &mut Rng) -> Vector {
    use rand_distr::{Distribution, StandardNormal};
    match domain.sample_uniform(rng) {
        Ok(v) => v,
        Err(_) => Vector::from_iterator(domain.dim(), (0..domain.dim()).map(|_| StandardNormal.sample(rng))),
    }
}

/// Compares every analytic derivative against central finite differences at
/// `n_points` random in-domain points. Failures are reported, not raised.
pub fn check_gradients(
    problem: &dyn Problem,
    n_points: usize,
    tol: f64,
    seed: u64,
) -> Result<GradientReport> {
    if n_points == 0 {
        return Err(CodaError::Precondition("n_points must be at least 1".into()));
    }
    let meta = problem.meta().clone();
    let mut rng = make_rng(seed, Stream::Probe as u64);
    let mut worst: Vec<(&'static str, f64, (usize, usize))> = Vec::new();
    let mut note = |name: &'static str, (e, at): (f64, (usize, usize))| {
        match worst.iter_mut().find(|w| w.0 == name) {
            Some(w) => {
                if !(e <= w.1) {
                    w.1 = e;
                    w.2 = at;
                }
            }
            None => worst.push((name, e, at)),
        }
    };

    for _ in 0..n_points {
        let x = random_point(problem.domain_x(), &mut rng);
        let y = random_point(problem.domain_y(), &mut rng);
        let inner_batch = draw_batch(SampleKind::Inner, 3, &mut rng);
        let outer_batch = draw_batch(SampleKind::Outer, 3, &mut rng);

        if meta.mode != CompositionMode::None {
            let input = match meta.mode {
                CompositionMode::OnPrimal => x.clone(),
                CompositionMode::OnDual => y.clone(),
                _ => stack(&x, &y),
            };
            let jac = g_jacobian(problem, &input, &inner_batch)?;
            let fd = fd_jacobian(
                |v| g_value(problem, v, &inner_batch).expect("shape checked"),
                &input,
                meta.d_z,
            );
            note("g_jacobian", max_relative_error(&jac, &fd));
        }

        // Outer arguments: evaluate f at the exact inner mean when available so
        // the check happens where the algorithms actually evaluate it.
        let (first, second) = match meta.mode {
            CompositionMode::OnPrimal => (inner_mean_value(problem, &x)?, y.clone()),
            CompositionMode::OnDual => (x.clone(), inner_mean_value(problem, &y)?),
            CompositionMode::OnBoth => (inner_mean_value(problem, &stack(&x, &y))?, Vector::zeros(0)),
            CompositionMode::None => (x.clone(), y.clone()),
        };
        let g1 = f_grad1(problem, &first, &second, &outer_batch)?;
        let fd1 = fd_gradient(|v| f_value(problem, v, &second, &outer_batch).unwrap(), &first);
        note("f_grad1", max_relative_error(&as_col(g1), &as_col(fd1)));
        if meta.mode != CompositionMode::OnBoth {
            let g2 = f_grad2(problem, &first, &second, &outer_batch)?;
            let fd2 = fd_gradient(|v| f_value(problem, &first, v, &outer_batch).unwrap(), &second);
            note("f_grad2", max_relative_error(&as_col(g2), &as_col(fd2)));
        }

        let hg = h_grad(problem, &x)?;
        let fdh = fd_gradient(|v| problem.h_value(v), &x);
        note("h_grad", max_relative_error(&as_col(hg), &as_col(fdh)));
        let rg = r_grad(problem, &y)?;
        let fdr = fd_gradient(|v| problem.r_value(v), &y);
        note("r_grad", max_relative_error(&as_col(rg), &as_col(fdr)));

        let point = PrimalDualPoint::new(x.clone(), y.clone());
        let (gx, gy) = full_gradient(problem, &point)?;
        let fdx = fd_gradient(|v| objective(problem, &PrimalDualPoint::new(v.clone(), y.clone())).unwrap(), &x);
        let fdy = fd_gradient(|v| objective(problem, &PrimalDualPoint::new(x.clone(), v.clone())).unwrap(), &y);
        note("full_gradient_x", max_relative_error(&as_col(gx), &as_col(fdx)));
        note("full_gradient_y", max_relative_error(&as_col(gy), &as_col(fdy)));
    }

    let checks = worst
        .into_iter()
        .map(|(name, e, at)| DerivativeCheck { name, max_rel_err: e, worst_entry: at, passed: e <= tol })
        .collect();
    Ok(GradientReport { problem: meta.name, n_points, tol, checks })
}
