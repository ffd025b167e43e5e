//! Quadratic minimization under a compositional constraint, penalized by a
//! bounded multiplier: `min_x max_{0 <= lambda <= lambda_max}
//! h(x) + lambda (1/2 |E[P x + q + sigma xi]|^2 - kappa)`.

use rand_distr::{Distribution, StandardNormal};

use super::{normals, orthogonal, spectral_norm, sym_extremes};
use crate::error::{CodaError, Result};
use crate::geometry::DomainSpec;
use crate::oracle::{CompositionMode, OracleSample, Problem, ProblemMeta};
use crate::types::{Matrix, PrimalDualPoint, Rng, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub d: usize,
    /// Number of constraint residuals.
    pub k: usize,
    pub lambda_max: f64,
    /// Level `kappa` as a multiple of the residual at the unconstrained
    /// minimizer; below one cuts that minimizer off.
    pub tightness: f64,
    pub noise_sigma: f64,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        Self { d: 5, k: 3, lambda_max: 10.0, tightness: 0.5, noise_sigma: 0.1 }
    }
}

/// `h(x) = 1/2 (x - x_c)^T Q (x - x_c)`, inner map `P x + q + sigma xi`,
/// outer map `lambda (1/2 |z|^2 - kappa)`.
#[derive(Debug, Clone)]
pub struct ConstraintPenalty {
    pub spec: ConstraintSpec,
    pub q_mat: Matrix,
    pub x_c: Vector,
    pub p_mat: Matrix,
    pub q_off: Vector,
    pub kappa: f64,
    meta: ProblemMeta,
    dom_x: DomainSpec,
    dom_y: DomainSpec,
}

pub fn make_constraint_penalty(d: usize, rng: &mut Rng) -> Result<ConstraintPenalty> {
    ConstraintPenalty::random(&ConstraintSpec { d, ..Default::default() }, rng)
}

impl ConstraintPenalty {
    pub fn random(spec: &ConstraintSpec, rng: &mut Rng) -> Result<Self> {
        let (d, k) = (spec.d, spec.k);
        let u = orthogonal(d, rng);
        let eigs = Vector::from_fn(d, |i, _| 1.0 + 2.0 * i as f64 / d.max(2) as f64);
        let q_mat = &u * Matrix::from_diagonal(&eigs) * u.transpose();
        let x_c = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let p_mat = Matrix::from_fn(k, d, |_, _| StandardNormal.sample(rng)) / (d as f64).sqrt();
        let q_off = Vector::from_fn(k, |_, _| StandardNormal.sample(rng));
        let kappa = spec.tightness * 0.5 * (&p_mat * &x_c + &q_off).norm_squared();
        Self::new(spec.clone(), q_mat, x_c, p_mat, q_off, kappa)
    }

    pub fn new(
        spec: ConstraintSpec,
        q_mat: Matrix,
        x_c: Vector,
        p_mat: Matrix,
        q_off: Vector,
        kappa: f64,
    ) -> Result<Self> {
        let (d, k) = (spec.d, spec.k);
        if d == 0 || k == 0 {
            return Err(CodaError::Parameter("constraint penalty needs d, k >= 1".into()));
        }
        if q_mat.shape() != (d, d) || x_c.len() != d || p_mat.shape() != (k, d) || q_off.len() != k {
            return Err(CodaError::Shape(format!("expected Q {d}x{d}, P {k}x{d}, q of length {k}")));
        }
        if !(spec.lambda_max >= 0.0) || !(spec.noise_sigma >= 0.0) || !kappa.is_finite() {
            return Err(CodaError::Parameter("lambda_max and sigma must be nonnegative".into()));
        }
        let (q_lo, q_hi) = sym_extremes(&q_mat);
        if q_lo <= 0.0 {
            return Err(CodaError::Parameter("Q must be positive definite".into()));
        }
        let pn = spectral_norm(&p_mat);
        let smoothness = q_hi + spec.lambda_max * pn * pn + pn * (1.0 + (&p_mat * &x_c + &q_off).norm()) + 1.0;
        let meta = ProblemMeta {
            name: "constraint_penalty".into(),
            d_x: d,
            d_y: 1,
            d_z: k,
            mode: CompositionMode::OnPrimal,
            smoothness,
            mu_sc_x: q_lo,
            mu_sc_y: 0.0,
            rho_weak: 0.0,
            sigma: spec.noise_sigma,
            has_true_saddle: false,
            has_closed_form_g: true,
            mc_samples: 0,
        };
        let dom_y = DomainSpec::cube(1, 0.0, spec.lambda_max)?;
        Ok(Self { spec, q_mat, x_c, p_mat, q_off, kappa, meta, dom_x: DomainSpec::unconstrained(d), dom_y })
    }

    /// Constraint value `1/2 |P x + q|^2 - kappa` at the exact inner mean.
    pub fn constraint(&self, x: &Vector) -> f64 {
        0.5 * (&self.p_mat * x + &self.q_off).norm_squared() - self.kappa
    }
}

impl Problem for ConstraintPenalty {
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
        let mean = &self.p_mat * x + &self.q_off;
        if self.spec.noise_sigma == 0.0 {
            return mean;
        }
        mean + normals(sample, self.spec.k) * self.spec.noise_sigma
    }
    fn inner_jacobian(&self, _x: &Vector, _sample: &OracleSample) -> Matrix {
        self.p_mat.clone()
    }
    fn inner_mean(&self, x: &Vector) -> Option<Vector> {
        Some(&self.p_mat * x + &self.q_off)
    }
    fn inner_mean_jacobian(&self, _x: &Vector) -> Option<Matrix> {
        Some(self.p_mat.clone())
    }
    fn outer_value(&self, z: &Vector, lambda: &Vector, _s: Option<&OracleSample>) -> f64 {
        lambda[0] * (0.5 * z.norm_squared() - self.kappa)
    }
    fn outer_grad1(&self, z: &Vector, lambda: &Vector, _s: Option<&OracleSample>) -> Vector {
        z * lambda[0]
    }
    fn outer_grad2(&self, z: &Vector, _lambda: &Vector, _s: Option<&OracleSample>) -> Vector {
        Vector::from_element(1, 0.5 * z.norm_squared() - self.kappa)
    }
    fn h_value(&self, x: &Vector) -> f64 {
        let e = x - &self.x_c;
        0.5 * e.dot(&(&self.q_mat * &e))
    }
    fn h_grad(&self, x: &Vector) -> Vector {
        &self.q_mat * (x - &self.x_c)
    }
    fn default_start(&self) -> PrimalDualPoint {
        PrimalDualPoint::new(Vector::zeros(self.spec.d), Vector::zeros(1))
    }
}
