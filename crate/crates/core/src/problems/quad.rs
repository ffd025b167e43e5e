//! Compositional quadratics with an affine noisy inner map and a closed-form
//! saddle.

use super::{normals, orthogonal, sym_extremes, spectral_norm};
use crate::error::{CodaError, Result};
use crate::fixture::Fixture;
use crate::geometry::DomainSpec;
use crate::oracle::{CompositionMode, OracleSample, Problem, ProblemMeta};
use crate::types::{Matrix, PrimalDualPoint, Rng, Vector};
use rand_distr::{Distribution, StandardNormal};

/// `F = h + f(E g) - r` with `g(v; xi) = B v + c + sigma xi`,
/// `h = mu_x/2 |x|^2`, `r = mu_y/2 |y|^2` and
///
/// * `OnPrimal`: `f(z, y) = 1/2 z^T A z + z^T C y`, `C` is `d_z x d_y`
/// * `OnDual`:   `f(x, z) = x^T C z + 1/2 z^T A z`, `C` is `d_x x d_z`
/// * `OnBoth`:   `f(z) = 1/2 z^T A z`, coupling carried by `A`; `C` is empty
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSpec {
    pub name: String,
    pub mode: CompositionMode,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub offset: Vector,
    pub mu_x: f64,
    pub mu_y: f64,
    pub noise_sigma: f64,
    pub domain_x: DomainSpec,
    pub domain_y: DomainSpec,
    pub start: Option<PrimalDualPoint>,
}

fn gaussian(r: usize, c: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn spread(d: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(d, |i, _| if d == 1 { hi } else { lo + (hi - lo) * i as f64 / (d - 1) as f64 })
}

fn rotated(d: usize, eigs: &Vector, rng: &mut Rng) -> Matrix {
    let u = orthogonal(d, rng);
    &u * Matrix::from_diagonal(eigs) * u.transpose()
}

fn near_identity(d: usize, scale: f64, rng: &mut Rng) -> Matrix {
    Matrix::identity(d, d) + gaussian(d, d, rng) * (scale / (d as f64).sqrt())
}

impl QuadSpec {
    /// `F = x^T y + 1/2 |x|^2 - 1/2 |y|^2`, saddle at the origin.
    pub fn unit(d: usize, noise_sigma: f64) -> Self {
        Self {
            name: "quad_unit".into(),
            mode: CompositionMode::OnPrimal,
            a: Matrix::zeros(d, d),
            b: Matrix::identity(d, d),
            c: Matrix::identity(d, d),
            offset: Vector::zeros(d),
            mu_x: 1.0,
            mu_y: 1.0,
            noise_sigma,
            domain_x: DomainSpec::unconstrained(d),
            domain_y: DomainSpec::unconstrained(d),
            start: None,
        }
    }

    /// Nonconvex in `x` (indefinite `A`), strongly concave in `y`, with a
    /// strongly convex primal function so that the minimax point is unique.
    pub fn ncsc(d: usize, noise_sigma: f64, rng: &mut Rng) -> Result<Self> {
        let a = rotated(d, &spread(d, -0.5, 1.0), rng);
        let b = near_identity(d, 0.3, rng);
        let offset = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let dir = Vector::from_fn(d, |_, _| StandardNormal.sample(rng)).normalize();
        let mut spec = Self {
            name: "quad_ncsc".into(),
            a,
            b,
            offset,
            ..Self::unit(d, noise_sigma)
        };
        spec.mu_x = 0.0;
        let saddle = QuadProblem::new(spec.clone())?.stationary_point()?;
        spec.start = Some(PrimalDualPoint::new(&saddle.x + dir * 2.0, Vector::zeros(d)));
        Ok(spec)
    }

    /// Strongly convex-strongly concave instance in the requested mode.
    pub fn scsc(mode: CompositionMode, d: usize, noise_sigma: f64, rng: &mut Rng) -> Result<Self> {
        let eigs = spread(d, 0.5, 1.5);
        let base = Self::unit(d, noise_sigma);
        let spec = match mode {
            CompositionMode::OnPrimal => Self {
                name: "quad_scsc_primal".into(),
                a: rotated(d, &eigs, rng),
                b: near_identity(d, 0.3, rng),
                c: gaussian(d, d, rng) * (0.5 / (d as f64).sqrt()),
                offset: Vector::from_fn(d, |_, _| StandardNormal.sample(rng)),
                mu_x: 0.1,
                ..base
            },
            CompositionMode::OnDual => Self {
                name: "quad_scsc_dual".into(),
                mode,
                a: -rotated(d, &eigs, rng),
                b: near_identity(d, 0.3, rng),
                c: gaussian(d, d, rng) * (0.5 / (d as f64).sqrt()),
                offset: Vector::from_fn(d, |_, _| StandardNormal.sample(rng)),
                mu_y: 0.1,
                ..base
            },
            CompositionMode::OnBoth => {
                let p = rotated(d, &eigs, rng);
                let q = rotated(d, &eigs, rng);
                let k = gaussian(d, d, rng) * (0.5 / (d as f64).sqrt());
                let mut a = Matrix::zeros(2 * d, 2 * d);
                a.view_mut((0, 0), (d, d)).copy_from(&p);
                a.view_mut((d, d), (d, d)).copy_from(&(-q));
                a.view_mut((0, d), (d, d)).copy_from(&k);
                a.view_mut((d, 0), (d, d)).copy_from(&k.transpose());
                let mut b = Matrix::zeros(2 * d, 2 * d);
                b.view_mut((0, 0), (d, d)).copy_from(&near_identity(d, 0.2, rng));
                b.view_mut((d, d), (d, d)).copy_from(&near_identity(d, 0.2, rng));
                Self {
                    name: "quad_scsc_both".into(),
                    mode,
                    a,
                    b,
                    c: Matrix::zeros(0, 0),
                    offset: Vector::from_fn(2 * d, |_, _| StandardNormal.sample(rng)),
                    mu_x: 0.1,
                    mu_y: 0.1,
                    ..base
                }
            }
            CompositionMode::None => {
                return Err(CodaError::UnsupportedMode("quadratic problems need an inner map".into()))
            }
        };
        Ok(spec)
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.domain_x.dim(), self.domain_y.dim(), self.a.nrows())
    }

    fn validate(&self) -> Result<()> {
        let (dx, dy, dz) = self.dims();
        let shape = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(CodaError::Shape(format!("{what}: expected {want:?}, got {got:?}")))
            }
        };
        shape("A", self.a.shape(), (dz, dz))?;
        if (&self.a - self.a.transpose()).amax() > 1e-12 * (1.0 + self.a.amax()) {
            return Err(CodaError::Parameter("A must be symmetric".into()));
        }
        shape("offset", (self.offset.len(), 1), (dz, 1))?;
        match self.mode {
            CompositionMode::OnPrimal => {
                shape("B", self.b.shape(), (dz, dx))?;
                shape("C", self.c.shape(), (dz, dy))?;
            }
            CompositionMode::OnDual => {
                shape("B", self.b.shape(), (dz, dy))?;
                shape("C", self.c.shape(), (dx, dz))?;
            }
            CompositionMode::OnBoth => {
                shape("B", self.b.shape(), (dz, dx + dy))?;
                if !self.c.is_empty() {
                    return Err(CodaError::Shape("C must be empty when composing on both blocks".into()));
                }
            }
            CompositionMode::None => {
                return Err(CodaError::UnsupportedMode("quadratic problems need an inner map".into()))
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(CodaError::Parameter(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma)));
        }
        if let Some(s) = &self.start {
            shape("start x", (s.x.len(), 1), (dx, 1))?;
            shape("start y", (s.y.len(), 1), (dy, 1))?;
        }
        Ok(())
    }

    /// Serializes the matrices (and the saddle, when supplied) as a fixture.
    /// Only unconstrained instances round-trip.
    pub fn to_fixture(&self, saddle: Option<&PrimalDualPoint>) -> Fixture {
        let mode = CompositionMode::ALL.iter().position(|m| *m == self.mode).unwrap_or(0);
        let (dx, dy, _) = self.dims();
        let mut f = Fixture::new(&self.name);
        f.push("scalars", Matrix::from_row_slice(1, 5, &[mode as f64, self.mu_x, self.mu_y, self.noise_sigma, dx as f64]));
        f.push("dims", Matrix::from_row_slice(1, 1, &[dy as f64]));
        f.push("A", self.a.clone());
        f.push("B", self.b.clone());
        f.push("C", self.c.clone());
        f.push("offset", as_col(&self.offset));
        if let Some(s) = saddle {
            f.push("saddle_x", as_col(&s.x));
            f.push("saddle_y", as_col(&s.y));
        }
        f
    }

    pub fn from_fixture(f: &Fixture) -> Result<Self> {
        let s = f.get("scalars")?;
        if s.len() != 5 {
            return Err(CodaError::Data("fixture scalars must have 5 entries".into()));
        }
        let mode = *CompositionMode::ALL
            .get(s[0] as usize)
            .ok_or_else(|| CodaError::Data(format!("unknown mode index {}", s[0])))?;
        let dx = s[4] as usize;
        let dy = f.get("dims")?[0] as usize;
        Ok(Self {
            name: f.name.clone(),
            mode,
            a: f.get("A")?.clone(),
            b: f.get("B")?.clone(),
            c: f.get("C")?.clone(),
            offset: f.get("offset")?.column(0).into_owned(),
            mu_x: s[1],
            mu_y: s[2],
            noise_sigma: s[3],
            domain_x: DomainSpec::unconstrained(dx),
            domain_y: DomainSpec::unconstrained(dy),
            start: None,
        })
    }
}

fn as_col(v: &Vector) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// The built quadratic. The full gradient is `H w + q` with `w = (x, y)`.
#[derive(Debug, Clone)]
pub struct QuadProblem {
    pub spec: QuadSpec,
    meta: ProblemMeta,
    hessian: Matrix,
    linear: Vector,
    saddle: Option<PrimalDualPoint>,
}

/// Builds the problem described by `spec`.
pub fn make_quad(spec: QuadSpec) -> Result<QuadProblem> {
    QuadProblem::new(spec)
}

/// The exact saddle of `spec` via a direct solve of its stationarity system.
pub fn make_quad_saddle(spec: &QuadSpec) -> Result<PrimalDualPoint> {
    QuadProblem::new(spec.clone())?.stationary_point()
}

impl QuadProblem {
    pub fn new(spec: QuadSpec) -> Result<Self> {
        spec.validate()?;
        let (dx, dy, dz) = spec.dims();
        let (a, b, c, o) = (&spec.a, &spec.b, &spec.c, &spec.offset);
        let mut hessian = Matrix::zeros(dx + dy, dx + dy);
        let mut linear = Vector::zeros(dx + dy);
        match spec.mode {
            CompositionMode::OnPrimal => {
                let bab = b.transpose() * a * b;
                let bc = b.transpose() * c;
                hessian.view_mut((0, 0), (dx, dx)).copy_from(&bab);
                hessian.view_mut((0, dx), (dx, dy)).copy_from(&bc);
                hessian.view_mut((dx, 0), (dy, dx)).copy_from(&bc.transpose());
                linear.rows_mut(0, dx).copy_from(&(b.transpose() * (a * o)));
                linear.rows_mut(dx, dy).copy_from(&(c.transpose() * o));
            }
            CompositionMode::OnDual => {
                let cb = c * b;
                hessian.view_mut((0, dx), (dx, dy)).copy_from(&cb);
                hessian.view_mut((dx, 0), (dy, dx)).copy_from(&cb.transpose());
                hessian.view_mut((dx, dx), (dy, dy)).copy_from(&(b.transpose() * a * b));
                linear.rows_mut(0, dx).copy_from(&(c * o));
                linear.rows_mut(dx, dy).copy_from(&(b.transpose() * (a * o)));
            }
            _ => {
                hessian.copy_from(&(b.transpose() * a * b));
                linear.copy_from(&(b.transpose() * (a * o)));
            }
        }
        for i in 0..dx {
            hessian[(i, i)] += spec.mu_x;
        }
        for j in dx..dx + dy {
            hessian[(j, j)] -= spec.mu_y;
        }

        let hxx = hessian.view((0, 0), (dx, dx)).into_owned();
        let hyy = hessian.view((dx, dx), (dy, dy)).into_owned();
        let (min_x, _) = sym_extremes(&hxx);
        let (_, max_y) = sym_extremes(&hyy);
        let (mu_sc_x, mu_sc_y) = (min_x.max(0.0), (-max_y).max(0.0));
        let smoothness = spectral_norm(&hessian).max(mu_sc_x).max(mu_sc_y).max(1e-12);
        let unconstrained = matches!(spec.domain_x, DomainSpec::Unconstrained { .. })
            && matches!(spec.domain_y, DomainSpec::Unconstrained { .. });
        let meta = ProblemMeta {
            name: spec.name.clone(),
            d_x: dx,
            d_y: dy,
            d_z: dz,
            mode: spec.mode,
            smoothness,
            mu_sc_x,
            mu_sc_y,
            rho_weak: (-min_x).max(max_y).max(0.0),
            sigma: spec.noise_sigma,
            has_true_saddle: false,
            has_closed_form_g: true,
            mc_samples: 0,
        };
        let mut out = Self { spec, meta, hessian, linear, saddle: None };
        if unconstrained && mu_sc_y > 0.0 && out.primal_curvature()? > 0.0 {
            out.saddle = Some(out.stationary_point()?);
            out.meta.has_true_saddle = true;
        }
        Ok(out)
    }

    /// Smallest eigenvalue of the primal function's Hessian
    /// `H_xx - H_xy H_yy^{-1} H_yx` (requires `H_yy` negative definite).
    pub fn primal_curvature(&self) -> Result<f64> {
        let (dx, dy) = (self.meta.d_x, self.meta.d_y);
        let hyy = self.hessian.view((dx, dx), (dy, dy)).into_owned();
        let inv = hyy
            .try_inverse()
            .ok_or_else(|| CodaError::Degenerate("dual Hessian is singular".into()))?;
        let hxy = self.hessian.view((0, dx), (dx, dy));
        let schur = self.hessian.view((0, 0), (dx, dx)) - hxy * inv * hxy.transpose();
        Ok(sym_extremes(&schur).0)
    }

    /// Hessian of `F` in the stacked variable.
    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    /// Gradient of `F` at the origin.
    pub fn linear_term(&self) -> &Vector {
        &self.linear
    }

    /// Solves `H w + q = 0`.
    pub fn stationary_point(&self) -> Result<PrimalDualPoint> {
        self.solve(&self.hessian, &(-&self.linear))
    }

    /// Saddle of `F + wx/2 |x - x_a|^2 - wy/2 |y - y_a|^2`.
    pub fn regularized_saddle(&self, anchor: &PrimalDualPoint, wx: f64, wy: f64) -> Result<PrimalDualPoint> {
        let dx = self.meta.d_x;
        let mut h = self.hessian.clone();
        let mut rhs = -&self.linear;
        for i in 0..h.nrows() {
            if i < dx {
                h[(i, i)] += wx;
                rhs[i] += wx * anchor.x[i];
            } else {
                h[(i, i)] -= wy;
                rhs[i] -= wy * anchor.y[i - dx];
            }
        }
        self.solve(&h, &rhs)
    }

    fn solve(&self, h: &Matrix, rhs: &Vector) -> Result<PrimalDualPoint> {
        let w = h
            .clone()
            .lu()
            .solve(rhs)
            .ok_or_else(|| CodaError::Degenerate("stationarity system is singular".into()))?;
        Ok(PrimalDualPoint::from_stacked(&w, self.meta.d_x))
    }
}

impl Problem for QuadProblem {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }
    fn domain_x(&self) -> &DomainSpec {
        &self.spec.domain_x
    }
    fn domain_y(&self) -> &DomainSpec {
        &self.spec.domain_y
    }
    fn inner(&self, input: &Vector, sample: &OracleSample) -> Vector {
        let mean = &self.spec.b * input + &self.spec.offset;
        if self.spec.noise_sigma == 0.0 {
            return mean;
        }
        mean + normals(sample, self.meta.d_z) * self.spec.noise_sigma
    }
    fn inner_jacobian(&self, _input: &Vector, _sample: &OracleSample) -> Matrix {
        self.spec.b.clone()
    }
    fn inner_mean(&self, input: &Vector) -> Option<Vector> {
        Some(&self.spec.b * input + &self.spec.offset)
    }
    fn inner_mean_jacobian(&self, _input: &Vector) -> Option<Matrix> {
        Some(self.spec.b.clone())
    }
    fn outer_value(&self, first: &Vector, second: &Vector, _s: Option<&OracleSample>) -> f64 {
        let (a, c) = (&self.spec.a, &self.spec.c);
        match self.spec.mode {
            CompositionMode::OnPrimal => 0.5 * first.dot(&(a * first)) + first.dot(&(c * second)),
            CompositionMode::OnDual => first.dot(&(c * second)) + 0.5 * second.dot(&(a * second)),
            _ => 0.5 * first.dot(&(a * first)),
        }
    }
    fn outer_grad1(&self, first: &Vector, second: &Vector, _s: Option<&OracleSample>) -> Vector {
        let (a, c) = (&self.spec.a, &self.spec.c);
        match self.spec.mode {
            CompositionMode::OnPrimal => a * first + c * second,
            CompositionMode::OnDual => c * second,
            _ => a * first,
        }
    }
    fn outer_grad2(&self, first: &Vector, second: &Vector, _s: Option<&OracleSample>) -> Vector {
        let (a, c) = (&self.spec.a, &self.spec.c);
        match self.spec.mode {
            CompositionMode::OnPrimal => c.tr_mul(first),
            _ => c.tr_mul(first) + a * second,
        }
    }
    fn h_value(&self, x: &Vector) -> f64 {
        0.5 * self.spec.mu_x * x.norm_squared()
    }
    fn h_grad(&self, x: &Vector) -> Vector {
        x * self.spec.mu_x
    }
    fn r_value(&self, y: &Vector) -> f64 {
        0.5 * self.spec.mu_y * y.norm_squared()
    }
    fn r_grad(&self, y: &Vector) -> Vector {
        y * self.spec.mu_y
    }
    fn r_affine(&self) -> Option<(Vector, Vector)> {
        Some((Vector::from_element(self.meta.d_y, self.spec.mu_y), Vector::zeros(self.meta.d_y)))
    }
    fn default_start(&self) -> PrimalDualPoint {
        self.spec
            .start
            .clone()
            .unwrap_or_else(|| PrimalDualPoint::new(self.spec.domain_x.center(), self.spec.domain_y.center()))
    }
    fn saddle(&self) -> Option<PrimalDualPoint> {
        self.saddle.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{check_gradients, draw_batch, full_gradient, g_value, SampleKind};
    use crate::types::make_rng;

    #[test]
    fn unit_instance_has_origin_saddle() {
        let p = make_quad(QuadSpec::unit(3, 0.5)).unwrap();
        let s = p.saddle().unwrap();
        assert!(s.x.amax() < 1e-15 && s.y.amax() < 1e-15);
        assert_eq!(p.meta().mu_sc_x, 1.0);
        assert_eq!(p.meta().mu_sc_y, 1.0);
    }

    #[test]
    fn gradient_is_affine_with_reported_hessian() {
        let mut rng = make_rng(1, 0);
        for mode in [CompositionMode::OnPrimal, CompositionMode::OnDual, CompositionMode::OnBoth] {
            let p = make_quad(QuadSpec::scsc(mode, 3, 0.0, &mut rng).unwrap()).unwrap();
            let w = Vector::from_fn(6, |i, _| (i as f64 * 0.7).sin());
            let pt = PrimalDualPoint::from_stacked(&w, 3);
            let (gx, gy) = full_gradient(&p, &pt).unwrap();
            let expect = p.hessian() * &w + p.linear_term();
            let got = crate::types::stack(&gx, &gy);
            assert!((got - expect).amax() < 1e-12, "{mode:?}");
            assert!(check_gradients(&p, 5, 1e-6, 2).unwrap().passed());
        }
    }

    #[test]
    fn saddle_zeroes_gradient() {
        let mut rng = make_rng(2, 0);
        for spec in [
            QuadSpec::scsc(CompositionMode::OnBoth, 4, 1.0, &mut rng).unwrap(),
            QuadSpec::ncsc(4, 1.0, &mut rng).unwrap(),
        ] {
            let p = make_quad(spec).unwrap();
            let s = p.saddle().expect("saddle");
            let (gx, gy) = full_gradient(&p, &s).unwrap();
            assert!(gx.amax() < 1e-12 && gy.amax() < 1e-12);
        }
    }

    #[test]
    fn ncsc_is_nonconvex_with_convex_primal_function() {
        let p = make_quad(QuadSpec::ncsc(5, 1.0, &mut make_rng(3, 0)).unwrap()).unwrap();
        assert_eq!(p.meta().mu_sc_x, 0.0);
        assert!(p.meta().rho_weak > 0.0);
        assert!(p.meta().mu_sc_y > 0.0);
        assert!(p.primal_curvature().unwrap() > 0.0);
        assert!(p.meta().has_true_saddle);
    }

    #[test]
    fn regularized_saddle_zeroes_wrapped_gradient() {
        let p = make_quad(QuadSpec::scsc(CompositionMode::OnBoth, 2, 0.0, &mut make_rng(4, 0)).unwrap()).unwrap();
        let anchor = PrimalDualPoint::new(Vector::from_element(2, 1.0), Vector::from_element(2, -0.5));
        let s = p.regularized_saddle(&anchor, 0.5, 0.25).unwrap();
        let (gx, gy) = full_gradient(&p, &s).unwrap();
        assert!((gx + (&s.x - &anchor.x) * 0.5).amax() < 1e-12);
        assert!((gy - (&s.y - &anchor.y) * 0.25).amax() < 1e-12);
    }

    #[test]
    fn noiseless_inner_is_batch_independent() {
        let p = make_quad(QuadSpec::unit(3, 0.0)).unwrap();
        let x = Vector::from_element(3, 0.3);
        let mut rng = make_rng(5, 0);
        let a = g_value(&p, &x, &draw_batch(SampleKind::Inner, 4, &mut rng)).unwrap();
        let b = g_value(&p, &x, &draw_batch(SampleKind::Inner, 9, &mut rng)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut spec = QuadSpec::unit(3, 0.0);
        spec.b = Matrix::zeros(2, 3);
        assert!(matches!(make_quad(spec), Err(CodaError::Shape(_))));
    }

    #[test]
    fn fixture_round_trip() {
        let spec = QuadSpec::scsc(CompositionMode::OnBoth, 2, 0.1, &mut make_rng(6, 0)).unwrap();
        let saddle = make_quad_saddle(&spec).unwrap();
        let text = spec.to_fixture(Some(&saddle)).to_text();
        let back = Fixture::parse(&text).unwrap();
        let spec2 = QuadSpec::from_fixture(&back).unwrap();
        assert_eq!(spec2.a, spec.a);
        assert_eq!(spec2.offset, spec.offset);
        assert_eq!(make_quad_saddle(&spec2).unwrap(), saddle);
    }
}
