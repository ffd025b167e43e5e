//! Task-robust one-step adaptation: `min_w max_{alpha in simplex}
//! sum_i alpha_i L_i(w - eta grad L_i(w))` with quadratic task losses.

use rand_distr::{Distribution, StandardNormal};

use super::{normals, orthogonal, sym_extremes};
use crate::error::{CodaError, Result};
use crate::geometry::DomainSpec;
use crate::oracle::{CompositionMode, OracleSample, Problem, ProblemMeta};
use crate::types::{Matrix, Rng, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct RobustSpec {
    pub n_tasks: usize,
    pub d: usize,
    /// Adaptation stepsize.
    pub eta_inner: f64,
    pub noise_sigma: f64,
    /// Drop the second-order term `-eta Q_i` from the inner Jacobian.
    pub first_order: bool,
}

impl Default for RobustSpec {
    fn default() -> Self {
        Self { n_tasks: 5, d: 5, eta_inner: 0.1, noise_sigma: 0.1, first_order: false }
    }
}

/// Task `i` has loss `L_i(w) = 1/2 (w - m_i)^T Q_i (w - m_i)`. The inner map
/// stacks the adapted points `w - eta Q_i (w - m_i - sigma eps_i)` (a noisy
/// task gradient) and the outer map weighs the task losses at them, with a
/// zero-mean linear perturbation per sample.
#[derive(Debug, Clone)]
pub struct RobustWeights {
    pub spec: RobustSpec,
    pub curvatures: Vec<Matrix>,
    pub minima: Vec<Vector>,
    meta: ProblemMeta,
    dom_x: DomainSpec,
    dom_y: DomainSpec,
}

pub fn make_robust_weights(n_tasks: usize, d: usize, rng: &mut Rng) -> Result<RobustWeights> {
    RobustWeights::random(&RobustSpec { n_tasks, d, ..Default::default() }, rng)
}

impl RobustWeights {
    /// Task curvatures with spectra in `[0.5, 2]` and standard normal minima.
    pub fn random(spec: &RobustSpec, rng: &mut Rng) -> Result<Self> {
        let d = spec.d;
        let mut qs = Vec::with_capacity(spec.n_tasks);
        let mut ms = Vec::with_capacity(spec.n_tasks);
        for _ in 0..spec.n_tasks {
            let u = orthogonal(d, rng);
            let eigs = Vector::from_fn(d, |_, _| 0.5 + 1.5 * rand::Rng::random::<f64>(rng));
            qs.push(&u * Matrix::from_diagonal(&eigs) * u.transpose());
            ms.push(Vector::from_fn(d, |_, _| StandardNormal.sample(rng)));
        }
        Self::new(spec.clone(), qs, ms)
    }

    pub fn new(spec: RobustSpec, curvatures: Vec<Matrix>, minima: Vec<Vector>) -> Result<Self> {
        let (n, d) = (spec.n_tasks, spec.d);
        if n < 2 || d == 0 {
            return Err(CodaError::Parameter("robust weights need at least 2 tasks and d >= 1".into()));
        }
        if curvatures.len() != n || minima.len() != n {
            return Err(CodaError::Shape(format!("expected {n} tasks")));
        }
        if curvatures.iter().any(|q| q.shape() != (d, d)) || minima.iter().any(|m| m.len() != d) {
            return Err(CodaError::Shape(format!("task data must have dimension {d}")));
        }
        if !(spec.eta_inner >= 0.0) || !(spec.noise_sigma >= 0.0) {
            return Err(CodaError::Parameter("eta_inner and sigma must be nonnegative".into()));
        }
        let mut qmax: f64 = 0.0;
        let mut lo = f64::INFINITY;
        for q in &curvatures {
            let (a, b) = sym_extremes(q);
            lo = lo.min(a);
            qmax = qmax.max(b.abs()).max(a.abs());
        }
        if lo < 0.0 {
            return Err(CodaError::Parameter("task curvatures must be positive semidefinite".into()));
        }
        let adapt = (1.0 + spec.eta_inner * qmax).powi(2);
        let spread = minima.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let smoothness = qmax * adapt * (n as f64).sqrt() + qmax * (1.0 + spread) + 1.0;
        let meta = ProblemMeta {
            name: "robust_weights".into(),
            d_x: d,
            d_y: n,
            d_z: n * d,
            mode: CompositionMode::OnPrimal,
            smoothness,
            mu_sc_x: 0.0,
            mu_sc_y: 0.0,
            rho_weak: smoothness,
            sigma: spec.noise_sigma,
            has_true_saddle: false,
            has_closed_form_g: true,
            mc_samples: 0,
        };
        Ok(Self { spec, curvatures, minima, meta, dom_x: DomainSpec::unconstrained(d), dom_y: DomainSpec::simplex(n)? })
    }

    fn adapted_mean(&self, w: &Vector, i: usize) -> Vector {
        w - &self.curvatures[i] * (w - &self.minima[i]) * self.spec.eta_inner
    }

    /// `L_i` at the exact adapted point.
    pub fn adapted_loss(&self, w: &Vector, i: usize) -> f64 {
        let e = self.adapted_mean(w, i) - &self.minima[i];
        0.5 * e.dot(&(&self.curvatures[i] * &e))
    }

    fn block<'a>(&self, z: &'a Vector, i: usize) -> nalgebra::DVectorView<'a, f64> {
        z.rows(i * self.spec.d, self.spec.d)
    }

    fn task_terms(&self, z: &Vector, s: Option<&OracleSample>) -> (Vec<f64>, Vec<Vector>) {
        let noise = match s {
            Some(s) if self.spec.noise_sigma > 0.0 => Some(normals(s, self.meta.d_z) * self.spec.noise_sigma),
            _ => None,
        };
        let mut vals = Vec::with_capacity(self.spec.n_tasks);
        let mut grads = Vec::with_capacity(self.spec.n_tasks);
        for i in 0..self.spec.n_tasks {
            let e = self.block(z, i) - &self.minima[i];
            let mut g = &self.curvatures[i] * &e;
            let mut v = 0.5 * e.dot(&g);
            if let Some(n) = &noise {
                let zeta = self.block(n, i);
                v += zeta.dot(&e);
                g += zeta;
            }
            vals.push(v);
            grads.push(g);
        }
        (vals, grads)
    }
}

impl Problem for RobustWeights {
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
        let mut z = self.inner_mean(input).expect("closed form");
        if self.spec.noise_sigma > 0.0 {
            let eps = normals(sample, self.meta.d_z);
            let d = self.spec.d;
            for i in 0..self.spec.n_tasks {
                let push = &self.curvatures[i] * eps.rows(i * d, d) * (self.spec.eta_inner * self.spec.noise_sigma);
                let mut block = z.rows_mut(i * d, d);
                block += push;
            }
        }
        z
    }
    fn inner_jacobian(&self, input: &Vector, _sample: &OracleSample) -> Matrix {
        if self.spec.first_order {
            let d = self.spec.d;
            let mut j = Matrix::zeros(self.meta.d_z, d);
            for i in 0..self.spec.n_tasks {
                j.view_mut((i * d, 0), (d, d)).fill_with_identity();
            }
            j
        } else {
            self.inner_mean_jacobian(input).expect("closed form")
        }
    }
    fn inner_mean(&self, input: &Vector) -> Option<Vector> {
        let d = self.spec.d;
        let mut z = Vector::zeros(self.meta.d_z);
        for i in 0..self.spec.n_tasks {
            z.rows_mut(i * d, d).copy_from(&self.adapted_mean(input, i));
        }
        Some(z)
    }
    fn inner_mean_jacobian(&self, _input: &Vector) -> Option<Matrix> {
        let d = self.spec.d;
        let mut j = Matrix::zeros(self.meta.d_z, d);
        for i in 0..self.spec.n_tasks {
            let block = Matrix::identity(d, d) - &self.curvatures[i] * self.spec.eta_inner;
            j.view_mut((i * d, 0), (d, d)).copy_from(&block);
        }
        Some(j)
    }
    fn outer_value(&self, z: &Vector, alpha: &Vector, s: Option<&OracleSample>) -> f64 {
        let (vals, _) = self.task_terms(z, s);
        vals.iter().zip(alpha.iter()).map(|(v, a)| v * a).sum()
    }
    fn outer_grad1(&self, z: &Vector, alpha: &Vector, s: Option<&OracleSample>) -> Vector {
        let (_, grads) = self.task_terms(z, s);
        let d = self.spec.d;
        let mut out = Vector::zeros(self.meta.d_z);
        for (i, g) in grads.iter().enumerate() {
            out.rows_mut(i * d, d).copy_from(&(g * alpha[i]));
        }
        out
    }
    fn outer_grad2(&self, z: &Vector, _alpha: &Vector, s: Option<&OracleSample>) -> Vector {
        Vector::from_vec(self.task_terms(z, s).0)
    }
}
