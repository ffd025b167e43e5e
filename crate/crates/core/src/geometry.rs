//! Feasible sets and Euclidean projections onto them.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{shape_err, CodaError, Result};
use crate::types::{Rng, Vector};

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Unconstrained { dim: usize },
    Box { lo: Vector, hi: Vector },
    Ball { center: Vector, radius: f64 },
    Simplex { dim: usize },
}

impl DomainSpec {
    pub fn unconstrained(dim: usize) -> Self {
        DomainSpec::Unconstrained { dim }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(Vector::from_element(dim, lo), Vector::from_element(dim, hi))
    }

    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(shape_err("box bounds", lo.len(), hi.len()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(CodaError::Parameter("box requires finite lo <= hi".into()));
        }
        Ok(DomainSpec::Box { lo, hi })
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(CodaError::Parameter(format!("ball radius must be positive, got {radius}")));
        }
        Ok(DomainSpec::Ball { center, radius })
    }

    pub fn simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CodaError::Parameter("simplex dimension must be positive".into()));
        }
        Ok(DomainSpec::Simplex { dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Unconstrained { dim } | DomainSpec::Simplex { dim } => *dim,
            DomainSpec::Box { lo, .. } => lo.len(),
            DomainSpec::Ball { center, .. } => center.len(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, DomainSpec::Unconstrained { .. })
    }

    /// Euclidean diameter, `None` when unbounded.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            DomainSpec::Unconstrained { .. } => None,
            DomainSpec::Box { lo, hi } => Some((hi - lo).norm()),
            DomainSpec::Ball { radius, .. } => Some(2.0 * radius),
            DomainSpec::Simplex { dim } => Some(if *dim > 1 { 2f64.sqrt() } else { 0.0 }),
        }
    }

    /// A canonical feasible point: the origin projected, the box/ball center
    /// or the simplex barycenter.
    pub fn center(&self) -> Vector {
        match self {
            DomainSpec::Unconstrained { dim } => Vector::zeros(*dim),
            DomainSpec::Box { lo, hi } => (lo + hi) * 0.5,
            DomainSpec::Ball { center, .. } => center.clone(),
            DomainSpec::Simplex { dim } => Vector::from_element(*dim, 1.0 / *dim as f64),
        }
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        match self {
            DomainSpec::Unconstrained { .. } => v.iter().all(|e| e.is_finite()),
            DomainSpec::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(e, (l, h))| *e >= l - tol && *e <= h + tol),
            DomainSpec::Ball { center, radius } => (v - center).norm() <= radius + tol,
            DomainSpec::Simplex { .. } => {
                v.iter().all(|e| *e >= -tol) && (v.sum() - 1.0).abs() <= tol.max(1e-12)
            }
        }
    }

    /// Uniform draw from a bounded domain (Dirichlet(1) on the simplex).
    pub fn sample_uniform(&self, rng: &mut Rng) -> Result<Vector> {
        match self {
            DomainSpec::Unconstrained { .. } => {
                Err(CodaError::Capability("cannot sample uniformly from an unbounded domain".into()))
            }
            DomainSpec::Box { lo, hi } => Ok(Vector::from_iterator(
                lo.len(),
                lo.iter().zip(hi.iter()).map(|(l, h)| l + (h - l) * rng.random::<f64>()),
            )),
            DomainSpec::Ball { center, radius } => {
                let d = center.len();
                let dir = Vector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
                let n = dir.norm().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                Ok(center + dir * (r / n))
            }
            DomainSpec::Simplex { dim } => {
                let e = Vector::from_iterator(*dim, (0..*dim).map(|_| Exp1.sample(rng)));
                let s = e.sum();
                Ok(e / s)
            }
        }
    }
}

/// Euclidean projection of `v` onto `domain`.
pub fn project(domain: &DomainSpec, v: &Vector) -> Result<Vector> {
    if v.len() != domain.dim() {
        return Err(shape_err("project", domain.dim(), v.len()));
    }
    Ok(match domain {
        DomainSpec::Unconstrained { .. } => v.clone(),
        DomainSpec::Box { lo, hi } => Vector::from_iterator(
            v.len(),
            v.iter().zip(lo.iter().zip(hi.iter())).map(|(e, (l, h))| e.clamp(*l, *h)),
        ),
        DomainSpec::Ball { center, radius } => {
            let diff = v - center;
            let n = diff.norm();
            // Points already inside (up to round-off) are returned untouched so
            // that projection is exactly idempotent.
            if n <= radius * (1.0 + 1e-12) {
                v.clone()
            } else {
                center + diff * (radius / n)
            }
        }
        DomainSpec::Simplex { .. } => project_simplex(v),
    })
}

fn simplex_feasible(v: &Vector) -> bool {
    let tol = 4.0 * f64::EPSILON * v.len() as f64;
    v.iter().all(|e| *e >= 0.0) && (v.sum() - 1.0).abs() <= tol
}

/// Sorted-threshold projection onto the probability simplex. Ties in the sort
/// are broken by index; the result is clamped to exact nonnegativity and
/// renormalized.
fn project_simplex(v: &Vector) -> Vector {
    if simplex_feasible(v) {
        return v.clone();
    }
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &i) in order.iter().enumerate() {
        cumsum += v[i];
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if v[i] - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    let mut out = v.map(|e| (e - theta).max(0.0));
    let s = out.sum();
    if s > 0.0 {
        out /= s;
    } else {
        out = Vector::from_element(n, 1.0 / n as f64);
    }
    out
}

/// `argmin_{u in domain} ||u - v||^2 + (1/rho) ||u - center||^2`.
///
/// The objective is an isotropic quadratic centred at `(rho v + center)/(rho + 1)`,
/// so the minimizer is the projection of that point for every supported domain.
pub fn prox_sq(domain: &DomainSpec, v: &Vector, center: &Vector, rho: f64) -> Result<Vector> {
    if !(rho > 0.0) || rho.is_nan() {
        return Err(CodaError::Parameter(format!("prox weight must be positive, got {rho}")));
    }
    if v.len() != center.len() {
        return Err(shape_err("prox_sq center", v.len(), center.len()));
    }
    let blended = if rho.is_infinite() { v.clone() } else { (v * rho + center) / (rho + 1.0) };
    project(domain, &blended)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::make_rng;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// Brute-force simplex projection for 3 coordinates: grid over the
    /// simplex, then local refinement around the best grid point.
    fn brute_force_simplex3(target: &Vector) -> Vector {
        let dist = |a: f64, b: f64| {
            let c = 1.0 - a - b;
            (a - target[0]).powi(2) + (b - target[1]).powi(2) + (c - target[2]).powi(2)
        };
        let (mut best_a, mut best_b) = (1.0 / 3.0, 1.0 / 3.0);
        let mut best = dist(best_a, best_b);
        let mut step = 0.01;
        let mut lo_a = 0.0;
        let mut hi_a = 1.0;
        let mut lo_b = 0.0;
        let mut hi_b = 1.0;
        for _ in 0..8 {
            let mut a = lo_a;
            while a <= hi_a + 1e-15 {
                let mut b = lo_b;
                while b <= hi_b + 1e-15 {
                    if a >= 0.0 && b >= 0.0 && a + b <= 1.0 + 1e-15 {
                        let d = dist(a, b);
                        if d < best {
                            best = d;
                            best_a = a;
                            best_b = b;
                        }
                    }
                    b += step;
                }
                a += step;
            }
            lo_a = (best_a - 2.0 * step).max(0.0);
            hi_a = (best_a + 2.0 * step).min(1.0);
            lo_b = (best_b - 2.0 * step).max(0.0);
            hi_b = (best_b + 2.0 * step).min(1.0);
            step /= 10.0;
        }
        v(&[best_a, best_b, (1.0 - best_a - best_b).max(0.0)])
    }

    #[test]
    fn simplex_fixture_matches_brute_force_and_kkt() {
        let target = v(&[1.2, 0.3, -0.5]);
        let brute = brute_force_simplex3(&target);
        // Frozen fixture from the brute-force oracle: (0.95, 0.05, 0).
        let expected = v(&[0.95, 0.05, 0.0]);
        assert!((&brute - &expected).amax() < 1e-6, "brute force gave {brute}");

        let p = project(&DomainSpec::simplex(3).unwrap(), &target).unwrap();
        assert!((&p - &expected).amax() < 1e-14, "got {p}");
        // KKT: active coordinates share the threshold, inactive lie below it.
        let theta = target[0] - p[0];
        assert!((target[1] - p[1] - theta).abs() < 1e-14);
        assert!(target[2] <= theta);
    }

    #[test]
    fn simple_projection_examples() {
        let x = v(&[3.0, -1.0]);
        assert_eq!(project(&DomainSpec::unconstrained(2), &x).unwrap(), x);
        let third = v(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(project(&DomainSpec::simplex(3).unwrap(), &third).unwrap(), third);
        assert!(matches!(
            project(&DomainSpec::simplex(3).unwrap(), &v(&[1.0, 0.0])),
            Err(CodaError::Shape(_))
        ));
    }

    #[test]
    fn prox_examples() {
        let un = DomainSpec::unconstrained(2);
        let zero = v(&[0.0, 0.0]);
        let p = prox_sq(&un, &v(&[1.0, 1.0]), &zero, 1e12).unwrap();
        assert!((p - v(&[1.0, 1.0])).amax() < 1e-6);
        let p = prox_sq(&un, &v(&[2.0, 0.0]), &zero, 1.0).unwrap();
        assert!((p - v(&[1.0, 0.0])).amax() < 1e-15);
        let bx = DomainSpec::cube(2, 0.0, 1.0).unwrap();
        let p = prox_sq(&bx, &v(&[2.0, 2.0]), &zero, 1.0).unwrap();
        assert_eq!(p, v(&[1.0, 1.0]));
        assert!(prox_sq(&un, &zero, &zero, 0.0).is_err());
    }

    #[test]
    fn prox_matches_grid_search_1d() {
        // argmin over [0,1] of (u-2)^2 + (1/rho)(u-0)^2, rho = 0.5.
        let d = DomainSpec::cube(1, 0.0, 1.0).unwrap();
        let p = prox_sq(&d, &v(&[2.0]), &v(&[0.0]), 0.5).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=100_000 {
            let u = i as f64 / 100_000.0;
            let obj = (u - 2.0).powi(2) + 2.0 * u * u;
            if obj < best.0 {
                best = (obj, u);
            }
        }
        assert!((p[0] - best.1).abs() < 1e-5);
    }

    fn domains() -> Vec<DomainSpec> {
        vec![
            DomainSpec::unconstrained(4),
            DomainSpec::boxed(v(&[-1.0, 0.0, -2.0, 0.5]), v(&[1.0, 0.5, 2.0, 0.5])).unwrap(),
            DomainSpec::ball(v(&[0.5, -0.5, 0.0, 1.0]), 1.5).unwrap(),
            DomainSpec::simplex(4).unwrap(),
        ]
    }

    #[test]
    fn projection_beats_random_feasible_points() {
        let mut rng = make_rng(7, 0);
        for d in domains().iter().filter(|d| d.is_bounded()) {
            for _ in 0..20 {
                let target = Vector::from_fn(4, |_, _| 3.0 * (rng.random::<f64>() - 0.5) * 2.0);
                let p = project(d, &target).unwrap();
                let dp = (&p - &target).norm();
                for _ in 0..1000 {
                    let q = d.sample_uniform(&mut rng).unwrap();
                    assert!(dp <= (&q - &target).norm() + 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn idempotent_nonexpansive_feasible(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let (a, b) = (Vector::from_vec(a), Vector::from_vec(b));
            for d in domains() {
                let pa = project(&d, &a).unwrap();
                let pb = project(&d, &b).unwrap();
                prop_assert_eq!(&project(&d, &pa).unwrap(), &pa);
                prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-12);
                prop_assert!(d.contains(&pa, 1e-12));
                if let DomainSpec::Simplex { .. } = d {
                    prop_assert!(pa.iter().all(|e| *e >= -1e-15));
                    prop_assert!((pa.sum() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
