//! Weakly-convex-weakly-concave toy on boxes with a certified Minty solution.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{normals, spectral_norm};
use crate::error::{CodaError, Result};
use crate::geometry::DomainSpec;
use crate::measures::mvi_residual;
use crate::oracle::{CompositionMode, OracleSample, Problem, ProblemMeta};
use crate::types::{make_rng, Matrix, PrimalDualPoint, Rng, Stream, Vector};

/// Probes used by the constructor's Minty self-check.
pub const MVI_PROBES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct WcwcSpec {
    pub d: usize,
    /// Weight `eps` of the separable quartic perturbation; zero leaves the
    /// bilinear core.
    pub scale: f64,
    /// Quartic coefficient `delta` of `phi(u) = u^2/2 - delta u^4/4`.
    pub delta: f64,
    /// Slope `s` of the inner map.
    pub stretch: f64,
    pub noise_sigma: f64,
}

impl Default for WcwcSpec {
    fn default() -> Self {
        Self { d: 5, scale: 1.0, delta: 1.0, stretch: 0.6, noise_sigma: 0.1 }
    }
}

/// Both blocks live in `[-1, 1]^d`. The inner map is `s (w - w*) + sigma xi`
/// on the stacked `w = (x, y)` and the outer map is
/// `f(u) = u_x^T K u_y + eps sum phi(u_x) - eps sum phi(u_y)`. At any
/// point the Minty product is `eps sum u phi'(u) = eps sum (u^2 - delta u^4)`,
/// nonnegative whenever `delta s^2 |w - w*|_inf^2 <= 1`, yet `phi'' = 1 - 3 delta u^2`
/// turns negative away from `w*`.
#[derive(Debug, Clone)]
pub struct WcwcToy {
    pub spec: WcwcSpec,
    pub coupling: Matrix,
    pub w_star: PrimalDualPoint,
    meta: ProblemMeta,
    dom: DomainSpec,
}

fn phi(u: f64, delta: f64) -> f64 {
    0.5 * u * u - 0.25 * delta * u.powi(4)
}

fn dphi(u: f64, delta: f64) -> f64 {
    u - delta * u.powi(3)
}

pub fn make_wcwc_toy(d: usize, rng: &mut Rng) -> Result<WcwcToy> {
    WcwcToy::random(&WcwcSpec { d, ..Default::default() }, rng)
}

impl WcwcToy {
    /// Gaussian coupling scaled by `1/sqrt(d)` and `w*` uniform in `[-1/2, 1/2]^{2d}`.
    pub fn random(spec: &WcwcSpec, rng: &mut Rng) -> Result<Self> {
        let d = spec.d;
        let coupling = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng)) / (d.max(1) as f64).sqrt();
        let x = Vector::from_fn(d, |_, _| rng.random_range(-0.5..=0.5));
        let y = Vector::from_fn(d, |_, _| rng.random_range(-0.5..=0.5));
        let probe_seed = rng.random::<u64>();
        let toy = Self::new(spec.clone(), coupling, PrimalDualPoint::new(x, y))?;
        let residual = mvi_residual(&toy, &toy.w_star, MVI_PROBES, &mut make_rng(probe_seed, Stream::Probe as u64))?;
        if residual < -1e-9 {
            return Err(CodaError::Construction(format!(
                "Minty check failed: residual {residual:.3e} over {MVI_PROBES} probes"
            )));
        }
        Ok(toy)
    }

    pub fn new(spec: WcwcSpec, coupling: Matrix, w_star: PrimalDualPoint) -> Result<Self> {
        let d = spec.d;
        if d == 0 {
            return Err(CodaError::Parameter("wcwc toy needs d >= 1".into()));
        }
        if coupling.shape() != (d, d) || w_star.x.len() != d || w_star.y.len() != d {
            return Err(CodaError::Shape(format!("expected a {d}x{d} coupling and w* of length {d} per block")));
        }
        if !(spec.scale >= 0.0) || !(spec.delta >= 0.0) || !(spec.stretch > 0.0) || !(spec.noise_sigma >= 0.0) {
            return Err(CodaError::Parameter("need scale, delta, sigma >= 0 and stretch > 0".into()));
        }
        let dom = DomainSpec::cube(d, -1.0, 1.0)?;
        if !(dom.contains(&w_star.x, 0.0) && dom.contains(&w_star.y, 0.0)) {
            return Err(CodaError::Parameter("w* must lie in the box".into()));
        }
        let s = spec.stretch;
        // Largest |u| over the box.
        let reach = s * w_star.x.iter().chain(w_star.y.iter()).map(|v| 1.0 + v.abs()).fold(0.0, f64::max);
        let neg_curv = (3.0 * spec.delta * reach * reach - 1.0).max(0.0);
        let pos_curv = 1.0f64.max(neg_curv);
        let smoothness = s * s * (spectral_norm(&coupling) + spec.scale * pos_curv);
        let meta = ProblemMeta {
            name: "wcwc".into(),
            d_x: d,
            d_y: d,
            d_z: 2 * d,
            mode: CompositionMode::OnBoth,
            smoothness,
            mu_sc_x: 0.0,
            mu_sc_y: 0.0,
            rho_weak: s * s * spec.scale * neg_curv,
            sigma: spec.noise_sigma,
            has_true_saddle: true,
            has_closed_form_g: true,
            mc_samples: 0,
        };
        Ok(Self { spec, coupling, w_star, meta, dom })
    }

    fn shift(&self) -> Vector {
        self.w_star.stacked()
    }
}

impl Problem for WcwcToy {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
    }
    fn domain_x(&self) -> &DomainSpec {
        &self.dom
    }
    fn domain_y(&self) -> &DomainSpec {
        &self.dom
    }
    fn inner(&self, w: &Vector, sample: &OracleSample) -> Vector {
        let mean = (w - self.shift()) * self.spec.stretch;
        if self.spec.noise_sigma == 0.0 {
            return mean;
        }
        mean + normals(sample, self.meta.d_z) * self.spec.noise_sigma
    }
    fn inner_jacobian(&self, _w: &Vector, _sample: &OracleSample) -> Matrix {
        Matrix::identity(self.meta.d_z, self.meta.d_z) * self.spec.stretch
    }
    fn inner_mean(&self, w: &Vector) -> Option<Vector> {
        Some((w - self.shift()) * self.spec.stretch)
    }
    fn inner_mean_jacobian(&self, _w: &Vector) -> Option<Matrix> {
        Some(Matrix::identity(self.meta.d_z, self.meta.d_z) * self.spec.stretch)
    }
    fn outer_value(&self, u: &Vector, _unused: &Vector, _s: Option<&OracleSample>) -> f64 {
        let d = self.spec.d;
        let (ux, uy) = (u.rows(0, d), u.rows(d, d));
        let delta = self.spec.delta;
        let sep: f64 = ux.iter().map(|&v| phi(v, delta)).sum::<f64>() - uy.iter().map(|&v| phi(v, delta)).sum::<f64>();
        ux.dot(&(&self.coupling * uy)) + self.spec.scale * sep
    }
    fn outer_grad1(&self, u: &Vector, _unused: &Vector, _s: Option<&OracleSample>) -> Vector {
        let d = self.spec.d;
        let (ux, uy) = (u.rows(0, d), u.rows(d, d));
        let (eps, delta) = (self.spec.scale, self.spec.delta);
        let mut g = Vector::zeros(2 * d);
        g.rows_mut(0, d).copy_from(&(&self.coupling * uy + ux.map(|v| eps * dphi(v, delta))));
        g.rows_mut(d, d).copy_from(&(self.coupling.tr_mul(&ux) - uy.map(|v| eps * dphi(v, delta))));
        g
    }
    fn outer_grad2(&self, _u: &Vector, _unused: &Vector, _s: Option<&OracleSample>) -> Vector {
        Vector::zeros(0)
    }
    fn default_start(&self) -> PrimalDualPoint {
        let d = self.spec.d;
        PrimalDualPoint::new(Vector::from_element(d, 0.9), Vector::from_element(d, -0.9))
    }
    fn saddle(&self) -> Option<PrimalDualPoint> {
        Some(self.w_star.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{mvi_residual, stationary_gap_sq};
    use crate::oracle::check_gradients;

    #[test]
    fn default_instance_passes_minty_check() {
        let toy = make_wcwc_toy(5, &mut make_rng(1, 0)).unwrap();
        let r = mvi_residual(&toy, &toy.w_star, MVI_PROBES, &mut make_rng(2, 0)).unwrap();
        assert!(r >= -1e-9);
        assert!(toy.meta().rho_weak > 0.0, "instance should be genuinely nonconvex");
    }

    #[test]
    fn zero_scale_is_bilinear_with_exact_saddle() {
        let spec = WcwcSpec { scale: 0.0, noise_sigma: 0.0, ..Default::default() };
        let toy = WcwcToy::random(&spec, &mut make_rng(3, 0)).unwrap();
        let s = toy.saddle().unwrap();
        assert_eq!(stationary_gap_sq(&toy, &s, 0.1, 0.1).unwrap(), 0.0);
        // Bilinear: F(x, y*) = F(x*, y*) = F(x*, y) for every x, y.
        let probe = PrimalDualPoint::new(Vector::from_element(5, 0.3), s.y.clone());
        let f = |p: &PrimalDualPoint| crate::oracle::objective(&toy, p).unwrap();
        assert_eq!(f(&probe), 0.0);
        assert_eq!(toy.meta().rho_weak, 0.0);
    }

    #[test]
    fn minty_product_matches_closed_form() {
        let toy = make_wcwc_toy(3, &mut make_rng(4, 0)).unwrap();
        let mut rng = make_rng(5, 0);
        let (eps, delta, s) = (toy.spec.scale, toy.spec.delta, toy.spec.stretch);
        for _ in 0..20 {
            let w = PrimalDualPoint::new(
                toy.dom.sample_uniform(&mut rng).unwrap(),
                toy.dom.sample_uniform(&mut rng).unwrap(),
            );
            let u = (w.stacked() - toy.w_star.stacked()) * s;
            let hand: f64 = u.iter().map(|&v| eps * (v * v - delta * v.powi(4))).sum();
            let got = crate::measures::mvi_inner_product(&toy, &w, &toy.w_star).unwrap();
            assert!((got - hand).abs() < 1e-12 * (1.0 + hand.abs()));
        }
    }

    #[test]
    fn too_much_stretch_fails_self_check() {
        let spec = WcwcSpec { stretch: 1.5, ..Default::default() };
        let r = WcwcToy::random(&spec, &mut make_rng(6, 0));
        assert!(matches!(r, Err(CodaError::Construction(_))));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let toy = make_wcwc_toy(3, &mut make_rng(7, 0)).unwrap();
        assert!(check_gradients(&toy, 10, 1e-4, 6).unwrap().passed());
    }
}
