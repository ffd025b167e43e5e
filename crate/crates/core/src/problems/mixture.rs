//! Mixture-weight estimation: choose source weights `alpha` so that no
//! hypothesis `w` separates the weighted source losses from the target loss.

use rand_distr::{Distribution, StandardNormal};

use super::{normals, orthogonal, spectral_norm};
use crate::error::{CodaError, Result};
use crate::geometry::DomainSpec;
use crate::oracle::{CompositionMode, OracleSample, Problem, ProblemMeta};
use crate::types::{Matrix, PrimalDualPoint, Rng, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub n_sources: usize,
    pub d: usize,
    /// `c` in the smoothed absolute value `sqrt(z^2 + c)`.
    pub c_smooth: f64,
    pub lambda: f64,
    pub noise_sigma: f64,
    /// Radius of the hypothesis ball.
    pub radius: f64,
    /// Scale of the source perturbations; zero makes every source equal the
    /// target.
    pub heterogeneity: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self { n_sources: 4, d: 5, c_smooth: 1.0, lambda: 1.0, noise_sigma: 0.1, radius: 2.0, heterogeneity: 1.0 }
    }
}

/// Source `s` (index `n` is the target) has loss `L_s(w) = 1/2 w^T S_s w - t_s^T w`.
/// The inner map on `w` returns the loss gaps `L_T(w) - L_i(w)` with a
/// multiplicative noise `sigma (eps_T - eps_i)^T w`; the outer map is
/// `sum_i alpha_i sqrt(z_i^2 + c)` and `h(alpha) = lambda alpha^T M alpha`
/// with diagonal positive `M`.
#[derive(Debug, Clone)]
pub struct MixtureWeights {
    pub spec: MixtureSpec,
    /// Quadratic parts; the last entry is the target.
    pub quads: Vec<Matrix>,
    pub lins: Vec<Vector>,
    pub m_diag: Vector,
    meta: ProblemMeta,
    dom_x: DomainSpec,
    dom_y: DomainSpec,
}

pub fn make_mixture_weights(n_sources: usize, d: usize, rng: &mut Rng) -> Result<MixtureWeights> {
    MixtureWeights::random(&MixtureSpec { n_sources, d, ..Default::default() }, rng)
}

fn sym_gaussian(d: usize, rng: &mut Rng) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    (&g + g.transpose()) / (2.0 * (d as f64).sqrt())
}

impl MixtureWeights {
    pub fn random(spec: &MixtureSpec, rng: &mut Rng) -> Result<Self> {
        let d = spec.d;
        let u = orthogonal(d, rng);
        let eigs = Vector::from_fn(d, |i, _| 1.0 + i as f64 / d.max(2) as f64);
        let s_t = &u * Matrix::from_diagonal(&eigs) * u.transpose();
        let t_t = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let mut quads = Vec::with_capacity(spec.n_sources + 1);
        let mut lins = Vec::with_capacity(spec.n_sources + 1);
        for _ in 0..spec.n_sources {
            let dq = sym_gaussian(d, rng) * spec.heterogeneity;
            let dl = Vector::from_fn(d, |_, _| StandardNormal.sample(rng)) * spec.heterogeneity;
            quads.push(&s_t + dq);
            lins.push(&t_t + dl);
        }
        quads.push(s_t);
        lins.push(t_t);
        let m_diag = Vector::from_fn(spec.n_sources, |_, _| 1.0 + 2.0 * rand::Rng::random::<f64>(rng));
        Self::new(spec.clone(), quads, lins, m_diag)
    }

    pub fn new(spec: MixtureSpec, quads: Vec<Matrix>, lins: Vec<Vector>, m_diag: Vector) -> Result<Self> {
        let (n, d) = (spec.n_sources, spec.d);
        if n < 2 || d == 0 {
            return Err(CodaError::Parameter("mixture weights need at least 2 sources and d >= 1".into()));
        }
        if quads.len() != n + 1 || lins.len() != n + 1 || m_diag.len() != n {
            return Err(CodaError::Shape(format!("expected {n} sources plus a target")));
        }
        if quads.iter().any(|q| q.shape() != (d, d)) || lins.iter().any(|t| t.len() != d) {
            return Err(CodaError::Shape(format!("source losses must have dimension {d}")));
        }
        if !(spec.c_smooth > 0.0) || !(spec.lambda >= 0.0) || !(spec.noise_sigma >= 0.0) || !(spec.radius > 0.0) {
            return Err(CodaError::Parameter("need c > 0, radius > 0, lambda >= 0, sigma >= 0".into()));
        }
        if m_diag.iter().any(|&m| !(m > 0.0)) {
            return Err(CodaError::Parameter("M must have a positive diagonal".into()));
        }
        // Bounds on the first two derivatives of the gaps over the ball.
        let r = spec.radius;
        let (mut grad, mut curv): (f64, f64) = (0.0, 0.0);
        for i in 0..n {
            let dq = spectral_norm(&(&quads[n] - &quads[i]));
            let dl = (&lins[n] - &lins[i]).norm();
            grad = grad.max(dq * r + dl + 2.0 * spec.noise_sigma);
            curv = curv.max(dq);
        }
        let c = spec.c_smooth;
        let mu_x = 2.0 * spec.lambda * m_diag.min();
        let smoothness = (2.0 * spec.lambda * m_diag.max())
            .max(grad * grad / c.sqrt() + curv + grad)
            .max(mu_x);
        let meta = ProblemMeta {
            name: "mixture_weights".into(),
            d_x: n,
            d_y: d,
            d_z: n,
            mode: CompositionMode::OnDual,
            smoothness,
            mu_sc_x: mu_x,
            mu_sc_y: 0.0,
            rho_weak: smoothness,
            sigma: spec.noise_sigma,
            has_true_saddle: false,
            has_closed_form_g: true,
            mc_samples: 0,
        };
        let dom_y = DomainSpec::ball(Vector::zeros(d), spec.radius)?;
        Ok(Self { spec, quads, lins, m_diag, meta, dom_x: DomainSpec::simplex(n)?, dom_y })
    }

    fn loss(&self, s: usize, w: &Vector) -> f64 {
        0.5 * w.dot(&(&self.quads[s] * w)) - self.lins[s].dot(w)
    }

    fn loss_grad(&self, s: usize, w: &Vector) -> Vector {
        &self.quads[s] * w - &self.lins[s]
    }

    fn sample_noise(&self, sample: &OracleSample) -> Option<Matrix> {
        if self.spec.noise_sigma == 0.0 {
            return None;
        }
        let (n, d) = (self.spec.n_sources, self.spec.d);
        let eps = normals(sample, (n + 1) * d);
        // Row i holds sigma (eps_T - eps_i)^T.
        Some(Matrix::from_fn(n, d, |i, j| self.spec.noise_sigma * (eps[n * d + j] - eps[i * d + j])))
    }

    fn smooth_abs(&self, z: f64) -> f64 {
        (z * z + self.spec.c_smooth).sqrt()
    }
}

impl Problem for MixtureWeights {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }
    fn domain_x(&self) -> &DomainSpec {
        &self.dom_x
    }
    fn domain_y(&self) -> &DomainSpec {
        &self.dom_y
    }
    fn inner(&self, w: &Vector, sample: &OracleSample) -> Vector {
        let mean = self.inner_mean(w).expect("closed form");
        match self.sample_noise(sample) {
            Some(e) => mean + e * w,
            None => mean,
        }
    }
    fn inner_jacobian(&self, w: &Vector, sample: &OracleSample) -> Matrix {
        let mean = self.inner_mean_jacobian(w).expect("closed form");
        match self.sample_noise(sample) {
            Some(e) => mean + e,
            None => mean,
        }
    }
    fn inner_mean(&self, w: &Vector) -> Option<Vector> {
        let n = self.spec.n_sources;
        let target = self.loss(n, w);
        Some(Vector::from_fn(n, |i, _| target - self.loss(i, w)))
    }
    fn inner_mean_jacobian(&self, w: &Vector) -> Option<Matrix> {
        let n = self.spec.n_sources;
        let target = self.loss_grad(n, w);
        let mut j = Matrix::zeros(n, self.spec.d);
        for i in 0..n {
            j.set_row(i, &(&target - self.loss_grad(i, w)).transpose());
        }
        Some(j)
    }
    fn outer_value(&self, alpha: &Vector, z: &Vector, _s: Option<&OracleSample>) -> f64 {
        alpha.iter().zip(z.iter()).map(|(a, &zi)| a * self.smooth_abs(zi)).sum()
    }
    fn outer_grad1(&self, _alpha: &Vector, z: &Vector, _s: Option<&OracleSample>) -> Vector {
        z.map(|zi| self.smooth_abs(zi))
    }
    fn outer_grad2(&self, alpha: &Vector, z: &Vector, _s: Option<&OracleSample>) -> Vector {
        Vector::from_fn(z.len(), |i, _| alpha[i] * z[i] / self.smooth_abs(z[i]))
    }
    fn h_value(&self, alpha: &Vector) -> f64 {
        self.spec.lambda * alpha.component_mul(&self.m_diag).dot(alpha)
    }
    fn h_grad(&self, alpha: &Vector) -> Vector {
        alpha.component_mul(&self.m_diag) * (2.0 * self.spec.lambda)
    }
    fn default_start(&self) -> PrimalDualPoint {
        let d = self.spec.d;
        let w = Vector::from_element(d, 0.5 * self.spec.radius / (d as f64).sqrt());
        PrimalDualPoint::new(self.dom_x.center(), w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::oracle::{check_gradients, full_gradient};
    use crate::types::make_rng;

    fn spec(c: f64, heterogeneity: f64) -> MixtureSpec {
        MixtureSpec { c_smooth: c, heterogeneity, noise_sigma: 0.0, ..Default::default() }
    }

    #[test]
    fn identical_sources_weight_inverse_to_m() {
        let p = MixtureWeights::random(&spec(1.0, 0.0), &mut make_rng(3, 0)).unwrap();
        let inv = p.m_diag.map(|m| 1.0 / m);
        let kkt = &inv / inv.sum();

        // Projected-gradient oracle on alpha with w held anywhere.
        let w = Vector::from_element(5, 0.3);
        let mut alpha = p.domain_x().center();
        for _ in 0..5000 {
            let (gx, _) = full_gradient(&p, &PrimalDualPoint::new(alpha.clone(), w.clone())).unwrap();
            alpha = project(p.domain_x(), &(&alpha - gx * 0.05)).unwrap();
        }
        assert!((&alpha - &kkt).amax() < 1e-9, "{alpha} vs {kkt}");
        let z = p.inner_mean(&w).unwrap();
        assert!(z.amax() < 1e-12);
        assert!((p.outer_value(&alpha, &z, None) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dual_gradient_flattens_as_c_grows() {
        let mut last = f64::INFINITY;
        for c in [0.1, 1.0, 10.0, 100.0, 1000.0, 1e5] {
            let p = MixtureWeights::random(&spec(c, 1.0), &mut make_rng(5, 0)).unwrap();
            let point = p.default_start();
            let (_, gy) = full_gradient(&p, &point).unwrap();
            assert!(gy.norm() < last, "c = {c}");
            last = gy.norm();
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = make_mixture_weights(3, 4, &mut make_rng(9, 0)).unwrap();
        assert!(check_gradients(&p, 10, 1e-4, 4).unwrap().passed());
    }

    #[test]
    fn strong_convexity_constant_is_reported() {
        let p = make_mixture_weights(3, 4, &mut make_rng(9, 0)).unwrap();
        assert_eq!(p.meta().mu_sc_x, 2.0 * p.m_diag.min());
    }
}
