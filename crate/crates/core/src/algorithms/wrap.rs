//! Quadratic proximal wrappers around a base problem.

use crate::error::{shape_err, CodaError, Result};
use crate::geometry::DomainSpec;
use crate::oracle::{OracleSample, Problem, ProblemMeta};
use crate::types::{Matrix, PrimalDualPoint, Vector};

/// `F(x, y) + x_weight/2 |x - x_anchor|^2 - y_weight/2 |y - y_anchor|^2`.
///
/// The quadratics are absorbed into the regularizers `h` and `r`, so the
/// inner and outer maps are untouched.
pub struct ProximalWrap<'a> {
    pub base: &'a dyn Problem,
    pub x_anchor: Vector,
    pub y_anchor: Vector,
    pub x_weight: f64,
    pub y_weight: f64,
    meta: ProblemMeta,
}

impl<'a> ProximalWrap<'a> {
    pub fn new(
        base: &'a dyn Problem,
        x_anchor: Vector,
        y_anchor: Vector,
        x_weight: f64,
        y_weight: f64,
    ) -> Result<Self> {
        let bm = base.meta();
        if x_anchor.len() != bm.d_x {
            return Err(shape_err("primal anchor", bm.d_x, x_anchor.len()));
        }
        if y_anchor.len() != bm.d_y {
            return Err(shape_err("dual anchor", bm.d_y, y_anchor.len()));
        }
        for (name, w) in [("x_weight", x_weight), ("y_weight", y_weight)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CodaError::Parameter(format!("{name} must be finite and nonnegative, got {w}")));
            }
        }
        let mut meta = bm.clone();
        meta.name = format!("{}+prox", bm.name);
        meta.mu_sc_x += x_weight;
        meta.mu_sc_y += y_weight;
        meta.smoothness += x_weight.max(y_weight);
        Ok(Self { base, x_anchor, y_anchor, x_weight, y_weight, meta })
    }

    /// `F + 1/(2 gamma) (|x - x_k|^2 - |y - y_k|^2)`.
    pub fn primal_dual(base: &'a dyn Problem, anchor: &PrimalDualPoint, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(CodaError::Parameter(format!("gamma must be positive, got {gamma}")));
        }
        Self::new(base, anchor.x.clone(), anchor.y.clone(), 1.0 / gamma, 1.0 / gamma)
    }

    /// `F + mu_x/2 |x - x_k|^2`.
    pub fn primal(base: &'a dyn Problem, x_anchor: &Vector, mu_x: f64) -> Result<Self> {
        let d_y = base.meta().d_y;
        Self::new(base, x_anchor.clone(), Vector::zeros(d_y), mu_x, 0.0)
    }
}

impl Problem for ProximalWrap<'_> {
    fn meta(&self) -> &ProblemMeta {
        &self.meta
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
        self.base.inner_jacobian(input, sample)
    }
    fn inner_mean(&self, input: &Vector) -> Option<Vector> {
        self.base.inner_mean(input)
    }
    fn inner_mean_jacobian(&self, input: &Vector) -> Option<Matrix> {
        self.base.inner_mean_jacobian(input)
    }
    fn outer_value(&self, first: &Vector, second: &Vector, sample: Option<&OracleSample>) -> f64 {
        self.base.outer_value(first, second, sample)
    }
    fn outer_grad1(&self, first: &Vector, second: &Vector, sample: Option<&OracleSample>) -> Vector {
        self.base.outer_grad1(first, second, sample)
    }
    fn outer_grad2(&self, first: &Vector, second: &Vector, sample: Option<&OracleSample>) -> Vector {
        self.base.outer_grad2(first, second, sample)
    }
    fn h_value(&self, x: &Vector) -> f64 {
        self.base.h_value(x) + 0.5 * self.x_weight * (x - &self.x_anchor).norm_squared()
    }
    fn h_grad(&self, x: &Vector) -> Vector {
        self.base.h_grad(x) + (x - &self.x_anchor) * self.x_weight
    }
    fn r_value(&self, y: &Vector) -> f64 {
        self.base.r_value(y) + 0.5 * self.y_weight * (y - &self.y_anchor).norm_squared()
    }
    fn r_grad(&self, y: &Vector) -> Vector {
        self.base.r_grad(y) + (y - &self.y_anchor) * self.y_weight
    }
    fn r_affine(&self) -> Option<(Vector, Vector)> {
        self.base.r_affine().map(|(d, o)| {
            (d.add_scalar(self.y_weight), o - &self.y_anchor * self.y_weight)
        })
    }
    fn default_start(&self) -> PrimalDualPoint {
        self.base.default_start()
    }
}

/// `F - eps^2 / (L D_Y^2) |y - y0|^2`: strongly concave surrogate of a merely
/// concave problem.
pub fn augment_concavity<'a>(
    problem: &'a dyn Problem,
    eps: f64,
    l: f64,
    d_y: f64,
    y0: &Vector,
) -> Result<ProximalWrap<'a>> {
    if !problem.domain_y().is_bounded() || !d_y.is_finite() {
        return Err(CodaError::Capability("concavity augmentation needs a bounded dual domain".into()));
    }
    if !(eps >= 0.0 && eps.is_finite() && l > 0.0 && d_y > 0.0) {
        return Err(CodaError::Parameter(format!(
            "augmentation needs eps >= 0, L > 0 and D_Y > 0 (got {eps}, {l}, {d_y})"
        )));
    }
    let mu = eps * eps / (l * d_y * d_y);
    let d_x = problem.meta().d_x;
    ProximalWrap::new(problem, Vector::zeros(d_x), y0.clone(), 0.0, 2.0 * mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::r_grad;
    use crate::testing::AffineNoise;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn wrap_adds_quadratic_gradients() {
        let p = AffineNoise::with_regularizers(2, 0.5, v(&[1.0, 2.0]));
        let w = ProximalWrap::new(&p, v(&[1.0, 1.0]), v(&[-1.0, 0.0]), 2.0, 3.0).unwrap();
        let x = v(&[0.0, 2.0]);
        let y = v(&[1.0, 1.0]);
        assert_eq!(w.h_grad(&x), p.h_grad(&x) + v(&[-2.0, 2.0]));
        assert_eq!(w.r_grad(&y), p.r_grad(&y) + v(&[6.0, 3.0]));
        let (d, o) = w.r_affine().unwrap();
        assert_eq!(d.component_mul(&y) + o, w.r_grad(&y));
        assert_eq!(w.meta().mu_sc_x, p.meta().mu_sc_x + 2.0);
    }

    #[test]
    fn augmentation_examples() {
        let p = AffineNoise::identity(2, 0.0)
            .with_domains(DomainSpec::cube(2, -1.0, 1.0).unwrap(), DomainSpec::cube(2, -1.0, 1.0).unwrap());
        let y0 = v(&[0.2, -0.1]);
        let same = augment_concavity(&p, 0.0, 1.0, 8f64.sqrt(), &y0).unwrap();
        let y = v(&[0.5, 0.5]);
        assert_eq!(r_grad(&same, &y).unwrap(), r_grad(&p, &y).unwrap());
        let aug = augment_concavity(&p, 0.3, 2.0, 8f64.sqrt(), &y0).unwrap();
        assert_eq!(r_grad(&aug, &y0).unwrap(), r_grad(&p, &y0).unwrap());
        let mu = 0.09 / (2.0 * 8.0);
        assert!((r_grad(&aug, &y).unwrap() - r_grad(&p, &y).unwrap() - (&y - &y0) * (2.0 * mu)).amax() < 1e-15);
        assert!((aug.meta().mu_sc_y - 2.0 * mu).abs() < 1e-15);

        let unbounded = AffineNoise::identity(2, 0.0);
        assert!(matches!(
            augment_concavity(&unbounded, 0.1, 1.0, 1.0, &y0),
            Err(CodaError::Capability(_))
        ));
    }
}
