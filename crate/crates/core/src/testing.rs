//! Small reference problems with hand-checkable derivatives, used by unit,
//! integration and acceptance tests.

use rand_distr::{Distribution, StandardNormal};

use crate::geometry::DomainSpec;
use crate::oracle::{CompositionMode, OracleSample, Problem, ProblemMeta, DEFAULT_MC_SAMPLES};
use crate::types::{make_rng, Matrix, Vector};

fn normals(sample: &OracleSample, n: usize) -> Vector {
    let mut rng = sample.rng();
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)))
}

fn meta(name: &str, d_x: usize, d_y: usize, d_z: usize, mode: CompositionMode, sigma: f64) -> ProblemMeta {
    ProblemMeta {
        name: name.into(),
        d_x,
        d_y,
        d_z,
        mode,
        smoothness: 1.0,
        mu_sc_x: 0.0,
        mu_sc_y: 0.0,
        rho_weak: 0.0,
        sigma,
        has_true_saddle: false,
        has_closed_form_g: true,
        mc_samples: DEFAULT_MC_SAMPLES,
    }
}

/// `g(v; xi) = B v + c + sigma xi` with `xi ~ N(0, I)` and a bilinear outer map.
///
/// * `OnPrimal`: `F = mu/2 |x|^2 + g(x)^T y - 1/2 y^T D y`
/// * `OnDual`:   `F = mu/2 |x|^2 + x^T g(y) - 1/2 y^T D y`
/// * `OnBoth`:   `F = mu/2 |x|^2 + g(w)_x^T g(w)_y - 1/2 y^T D y` (requires `d_z` even)
#[derive(Debug, Clone)]
pub struct AffineNoise {
    pub meta: ProblemMeta,
    pub b: Matrix,
    pub c: Vector,
    pub mu_h: f64,
    pub r_diag: Vector,
    pub dom_x: DomainSpec,
    pub dom_y: DomainSpec,
}

impl AffineNoise {
    /// Identity inner map on `d` coordinates, `F = x^T y` (plus noise).
    pub fn identity(d: usize, sigma: f64) -> Self {
        Self {
            meta: meta("affine_identity", d, d, d, CompositionMode::OnPrimal, sigma),
            b: Matrix::identity(d, d),
            c: Vector::zeros(d),
            mu_h: 0.0,
            r_diag: Vector::zeros(d),
            dom_x: DomainSpec::unconstrained(d),
            dom_y: DomainSpec::unconstrained(d),
        }
    }

    pub fn with_regularizers(d: usize, mu_h: f64, r_diag: Vector) -> Self {
        let mut p = Self::identity(d, 0.0);
        p.mu_h = mu_h;
        p.r_diag = r_diag;
        p
    }

    /// Random `B` (`d_z x d_x`) and offset; `d_y = d_z`.
    pub fn random(d_z: usize, d_x: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = make_rng(seed, 0);
        let b = Matrix::from_fn(d_z, d_x, |_, _| StandardNormal.sample(&mut rng));
        let c = Vector::from_fn(d_z, |_, _| StandardNormal.sample(&mut rng));
        Self {
            meta: meta("affine_random", d_x, d_z, d_z, CompositionMode::OnPrimal, sigma),
            b,
            c,
            mu_h: 0.0,
            r_diag: Vector::from_element(d_z, 1.0),
            dom_x: DomainSpec::unconstrained(d_x),
            dom_y: DomainSpec::unconstrained(d_z),
        }
    }

    /// Composition on `y`, identity inner map.
    pub fn on_dual(d: usize, sigma: f64) -> Self {
        let mut p = Self::identity(d, sigma);
        p.meta.mode = CompositionMode::OnDual;
        p.meta.name = "affine_on_dual".into();
        p
    }

    /// Composition on the stacked pair, identity inner map on `2 d` coordinates.
    pub fn on_both(d: usize, sigma: f64) -> Self {
        let mut p = Self::identity(d, sigma);
        p.meta = meta("affine_on_both", d, d, 2 * d, CompositionMode::OnBoth, sigma);
        p.b = Matrix::identity(2 * d, 2 * d);
        p.c = Vector::zeros(2 * d);
        p
    }

    pub fn with_mode(mut self, mode: CompositionMode) -> Self {
        self.meta.mode = mode;
        self
    }

    pub fn with_domains(mut self, dom_x: DomainSpec, dom_y: DomainSpec) -> Self {
        self.dom_x = dom_x;
        self.dom_y = dom_y;
        self
    }

    fn split_half(z: &Vector) -> (Vector, Vector) {
        let h = z.len() / 2;
        (z.rows(0, h).into_owned(), z.rows(h, h).into_owned())
    }
}

impl Problem for AffineNoise {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }
    fn domain_x(&self) -> &DomainSpec {
        &self.dom_x
    }
    fn domain_y(&self) -> &DomainSpec {
        &self.dom_y
    }
    fn inner(&self, input: &Vector, sample: &OracleSample) -> Vector {
        let mut out = &self.b * input + &self.c;
        if self.meta.sigma != 0.0 {
            out += normals(sample, self.meta.d_z) * self.meta.sigma;
        }
        out
    }
    fn inner_jacobian(&self, _input: &Vector, _sample: &OracleSample) -> Matrix {
        self.b.clone()
    }
    fn inner_mean(&self, input: &Vector) -> Option<Vector> {
        Some(&self.b * input + &self.c)
    }
    fn inner_mean_jacobian(&self, _input: &Vector) -> Option<Matrix> {
        Some(self.b.clone())
    }
    fn outer_value(&self, first: &Vector, second: &Vector, _s: Option<&OracleSample>) -> f64 {
        match self.meta.mode {
            CompositionMode::OnBoth => {
                let (a, b) = Self::split_half(first);
                a.dot(&b)
            }
            _ => first.dot(second),
        }
    }
    fn outer_grad1(&self, first: &Vector, second: &Vector, _s: Option<&OracleSample>) -> Vector {
        match self.meta.mode {
            CompositionMode::OnBoth => {
                let (a, b) = Self::split_half(first);
                crate::types::stack(&b, &a)
            }
            _ => second.clone(),
        }
    }
    fn outer_grad2(&self, first: &Vector, _second: &Vector, _s: Option<&OracleSample>) -> Vector {
        first.clone()
    }
    fn h_value(&self, x: &Vector) -> f64 {
        0.5 * self.mu_h * x.norm_squared()
    }
    fn h_grad(&self, x: &Vector) -> Vector {
        x * self.mu_h
    }
    fn r_value(&self, y: &Vector) -> f64 {
        0.5 * y.iter().zip(self.r_diag.iter()).map(|(a, d)| d * a * a).sum::<f64>()
    }
    fn r_grad(&self, y: &Vector) -> Vector {
        y.component_mul(&self.r_diag)
    }
    fn r_affine(&self) -> Option<(Vector, Vector)> {
        Some((self.r_diag.clone(), Vector::zeros(self.r_diag.len())))
    }
}

/// Non-compositional bilinear `F(x, y) = x^T y`.
#[derive(Debug, Clone)]
pub struct Bilinear {
    pub meta: ProblemMeta,
    pub dom_x: DomainSpec,
    pub dom_y: DomainSpec,
}

impl Bilinear {
    pub fn new(d: usize) -> Self {
        Self {
            meta: meta("bilinear", d, d, 0, CompositionMode::None, 0.0),
            dom_x: DomainSpec::unconstrained(d),
            dom_y: DomainSpec::unconstrained(d),
        }
    }

    pub fn on_boxes(d: usize, half_width: f64) -> Self {
        let mut p = Self::new(d);
        p.dom_x = DomainSpec::cube(d, -half_width, half_width).expect("valid box");
        p.dom_y = p.dom_x.clone();
        p
    }
}

impl Problem for Bilinear {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }
    fn domain_x(&self) -> &DomainSpec {
        &self.dom_x
    }
    fn domain_y(&self) -> &DomainSpec {
        &self.dom_y
    }
    fn inner(&self, _input: &Vector, _sample: &OracleSample) -> Vector {
        Vector::zeros(0)
    }
    fn inner_jacobian(&self, input: &Vector, _sample: &OracleSample) -> Matrix {
        Matrix::zeros(0, input.len())
    }
    fn outer_value(&self, first: &Vector, second: &Vector, _s: Option<&OracleSample>) -> f64 {
        first.dot(second)
    }
    fn outer_grad1(&self, _first: &Vector, second: &Vector, _s: Option<&OracleSample>) -> Vector {
        second.clone()
    }
    fn outer_grad2(&self, first: &Vector, _second: &Vector, _s: Option<&OracleSample>) -> Vector {
        first.clone()
    }
}

/// Quadratic inner map with a noisy linear term:
/// `g_i(x; xi) = 1/2 x^T Q_i x + (b_i + sigma u_i)^T x + sigma v_i`,
/// outer `f(z, y) = 1/2 |z|^2 + z^T y`, `r(y) = |y|^2`.
#[derive(Debug, Clone)]
pub struct QuadraticInner {
    pub meta: ProblemMeta,
    pub q: Vec<Matrix>,
    pub b: Matrix,
    pub dom_x: DomainSpec,
    pub dom_y: DomainSpec,
}

impl QuadraticInner {
    pub fn random(d_z: usize, d_x: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = make_rng(seed, 0);
        let q = (0..d_z)
            .map(|_| {
                let a = Matrix::from_fn(d_x, d_x, |_, _| StandardNormal.sample(&mut rng));
                (&a + a.transpose()) * 0.5
            })
            .collect();
        let b = Matrix::from_fn(d_z, d_x, |_, _| StandardNormal.sample(&mut rng));
        Self {
            meta: meta("quadratic_inner", d_x, d_z, d_z, CompositionMode::OnPrimal, sigma),
            q,
            b,
            dom_x: DomainSpec::cube(d_x, -1.0, 1.0).expect("valid box"),
            dom_y: DomainSpec::unconstrained(d_z),
        }
    }

    fn noise(&self, sample: &OracleSample) -> (Matrix, Vector) {
        let (dz, dx) = (self.meta.d_z, self.meta.d_x);
        let raw = normals(sample, dz * dx + dz) * self.meta.sigma;
        let u = Matrix::from_column_slice(dz, dx, &raw.as_slice()[..dz * dx]);
        let v = Vector::from_column_slice(&raw.as_slice()[dz * dx..]);
        (u, v)
    }
}

impl Problem for QuadraticInner {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }
    fn domain_x(&self) -> &DomainSpec {
        &self.dom_x
    }
    fn domain_y(&self) -> &DomainSpec {
        &self.dom_y
    }
    fn inner(&self, x: &Vector, sample: &OracleSample) -> Vector {
        let mean = self.inner_mean(x).expect("closed form");
        if self.meta.sigma == 0.0 {
            return mean;
        }
        let (u, v) = self.noise(sample);
        mean + u * x + v
    }
    fn inner_jacobian(&self, x: &Vector, sample: &OracleSample) -> Matrix {
        let (u, _) = self.noise(sample);
        self.inner_mean_jacobian(x).expect("closed form") + u
    }
    fn inner_mean(&self, x: &Vector) -> Option<Vector> {
        let quad = Vector::from_iterator(self.q.len(), self.q.iter().map(|q| 0.5 * x.dot(&(q * x))));
        Some(quad + &self.b * x)
    }
    fn inner_mean_jacobian(&self, x: &Vector) -> Option<Matrix> {
        let mut j = self.b.clone();
        for (i, q) in self.q.iter().enumerate() {
            let row = (q * x).transpose();
            let cur = j.row(i) + row;
            j.set_row(i, &cur);
        }
        Some(j)
    }
    fn outer_value(&self, z: &Vector, y: &Vector, _s: Option<&OracleSample>) -> f64 {
        0.5 * z.norm_squared() + z.dot(y)
    }
    fn outer_grad1(&self, z: &Vector, y: &Vector, _s: Option<&OracleSample>) -> Vector {
        z + y
    }
    fn outer_grad2(&self, z: &Vector, _y: &Vector, _s: Option<&OracleSample>) -> Vector {
        z.clone()
    }
    fn r_value(&self, y: &Vector) -> f64 {
        y.norm_squared()
    }
    fn r_grad(&self, y: &Vector) -> Vector {
        y * 2.0
    }
    fn r_affine(&self) -> Option<(Vector, Vector)> {
        Some((Vector::from_element(self.meta.d_y, 2.0), Vector::zeros(self.meta.d_y)))
    }
}

/// Wraps a problem and shifts one entry of every per-sample inner Jacobian.
pub struct CorruptJacobian<P: Problem> {
    pub base: P,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

impl<P: Problem> Problem for CorruptJacobian<P> {
    fn meta(&self) -> &ProblemMeta {
        self.base.meta()
    }
    fn domain_x(&self) -> &DomainSpec {
        self.base.domain_x()
    }
    fn domain_y(&self) -> &DomainSpec {
        self.base.domain_y()
    }
    fn inner(&self, input: &Vector, sample: &OracleSample) -> Vector {
        self.base.inner(input, sample)
    }
    fn inner_jacobian(&self, input: &Vector, sample: &OracleSample) -> Matrix {
        let mut j = self.base.inner_jacobian(input, sample);
        j[(self.row, self.col)] += self.delta;
        j
    }
    fn inner_mean(&self, input: &Vector) -> Option<Vector> {
        self.base.inner_mean(input)
    }
    fn inner_mean_jacobian(&self, input: &Vector) -> Option<Matrix> {
        self.base.inner_mean_jacobian(input)
    }
    fn outer_value(&self, a: &Vector, b: &Vector, s: Option<&OracleSample>) -> f64 {
        self.base.outer_value(a, b, s)
    }
    fn outer_grad1(&self, a: &Vector, b: &Vector, s: Option<&OracleSample>) -> Vector {
        self.base.outer_grad1(a, b, s)
    }
    fn outer_grad2(&self, a: &Vector, b: &Vector, s: Option<&OracleSample>) -> Vector {
        self.base.outer_grad2(a, b, s)
    }
    fn h_value(&self, x: &Vector) -> f64 {
        self.base.h_value(x)
    }
    fn h_grad(&self, x: &Vector) -> Vector {
        self.base.h_grad(x)
    }
    fn r_value(&self, y: &Vector) -> f64 {
        self.base.r_value(y)
    }
    fn r_grad(&self, y: &Vector) -> Vector {
        self.base.r_grad(y)
    }
}
