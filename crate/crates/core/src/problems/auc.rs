//! Imbalanced-classification AUC surrogate with a one-step-adapted linear
//! scorer.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{CodaError, Result};
use crate::geometry::DomainSpec;
use crate::oracle::{CompositionMode, OracleSample, Problem, ProblemMeta};
use crate::types::{Matrix, PrimalDualPoint, Rng, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct AucToySpec {
    pub n: usize,
    pub d: usize,
    /// Fraction of positive labels.
    pub imratio: f64,
    /// Stepsize of the adaptation `w - alpha grad L(w)`.
    pub alpha_inner: f64,
    /// Distance between the two class means.
    pub separation: f64,
    /// The dual variable lives in `[-theta_max, theta_max]`.
    pub theta_max: f64,
}

impl Default for AucToySpec {
    fn default() -> Self {
        Self { n: 1000, d: 5, imratio: 0.1, alpha_inner: 0.1, separation: 4.0, theta_max: 10.0 }
    }
}

/// Primal variable `(w, a, b)`, dual `theta`. The inner map adapts the scorer,
/// `g(w, a, b; i) = (w - alpha grad l(w; x_i, y_i), a, b)` with the logistic
/// loss `l`, and the outer map is the square-loss AUC surrogate
///
/// ```text
/// phi = (1-p)(s - a)^2 [y=1] + p (s - b)^2 [y=-1]
///       + 2 (1 + theta)(p s [y=-1] - (1-p) s [y=1]) - p(1-p) theta^2
/// ```
///
/// with `s = w^T x`. Both levels sample a data index uniformly.
#[derive(Debug, Clone)]
pub struct AucProblem {
    pub spec: AucToySpec,
    pub features: Matrix,
    pub labels: Vec<f64>,
    pub p: f64,
    meta: ProblemMeta,
    dom_x: DomainSpec,
    dom_y: DomainSpec,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Draws two Gaussian classes with unit covariance and the requested
/// positive fraction.
pub fn make_auc_toy(spec: &AucToySpec, rng: &mut Rng) -> Result<AucProblem> {
    if spec.n == 0 || spec.d == 0 {
        return Err(CodaError::Parameter("AUC toy needs n, d >= 1".into()));
    }
    if !(spec.imratio > 0.0 && spec.imratio < 1.0) {
        return Err(CodaError::Parameter(format!("imratio must lie in (0, 1), got {}", spec.imratio)));
    }
    let n_pos = (spec.imratio * spec.n as f64).round() as usize;
    let mean = Vector::from_element(spec.d, 0.5 * spec.separation / (spec.d as f64).sqrt());
    let mut features = Matrix::zeros(spec.n, spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y = if i < n_pos { 1.0 } else { -1.0 };
        for j in 0..spec.d {
            let e: f64 = StandardNormal.sample(rng);
            features[(i, j)] = y * mean[j] + e;
        }
        labels.push(y);
    }
    AucProblem::from_data(spec.clone(), features, labels)
}

impl AucProblem {
    pub fn from_data(spec: AucToySpec, features: Matrix, labels: Vec<f64>) -> Result<Self> {
        let (n, d) = features.shape();
        if labels.len() != n || n == 0 {
            return Err(CodaError::Data(format!("{} labels for {n} feature rows", labels.len())));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(CodaError::Data("labels must be +1 or -1".into()));
        }
        let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
        if n_pos == 0 || n_pos == n {
            return Err(CodaError::Data("both classes must be present".into()));
        }
        if !(spec.theta_max > 0.0) || !(spec.alpha_inner >= 0.0) {
            return Err(CodaError::Parameter("theta_max must be positive and alpha_inner nonnegative".into()));
        }
        let p = n_pos as f64 / n as f64;
        let max_sq = (0..n).map(|i| features.row(i).norm_squared()).fold(0.0, f64::max);
        // Loose bound: the scorer Hessian is at most 2 |x|^2 and the adaptation
        // Jacobian at most 1 + alpha |x|^2 / 4.
        let adapt = 1.0 + spec.alpha_inner * max_sq / 4.0;
        let smoothness = 2.0 * (1.0 + max_sq) * adapt * adapt + 2.0;
        let meta = ProblemMeta {
            name: "auc".into(),
            d_x: d + 2,
            d_y: 1,
            d_z: d + 2,
            mode: CompositionMode::OnPrimal,
            smoothness,
            mu_sc_x: 0.0,
            mu_sc_y: 2.0 * p * (1.0 - p),
            rho_weak: smoothness,
            sigma: 1.0,
            has_true_saddle: false,
            has_closed_form_g: true,
            mc_samples: 0,
        };
        let dom_y = DomainSpec::cube(1, -spec.theta_max, spec.theta_max)?;
        Ok(Self { spec, features, labels, p, meta, dom_x: DomainSpec::unconstrained(d + 2), dom_y })
    }

    fn d(&self) -> usize {
        self.features.ncols()
    }

    fn row(&self, i: usize) -> Vector {
        self.features.row(i).transpose()
    }

    fn adapted(&self, x: &Vector, i: usize) -> Vector {
        let d = self.d();
        let xi = self.row(i);
        let y = self.labels[i];
        let w = x.rows(0, d);
        let grad = &xi * (-y * sigmoid(-y * w.dot(&xi)));
        let mut z = x.clone();
        z.rows_mut(0, d).axpy(-self.spec.alpha_inner, &grad, 1.0);
        z
    }

    fn adapted_jacobian(&self, x: &Vector, i: usize) -> Matrix {
        let d = self.d();
        let xi = self.row(i);
        let s = x.rows(0, d).dot(&xi);
        let curv = sigmoid(s) * sigmoid(-s);
        let mut j = Matrix::identity(d + 2, d + 2);
        j.view_mut((0, 0), (d, d)).gemm(-self.spec.alpha_inner * curv, &xi, &xi.transpose(), 1.0);
        j
    }

    /// `(phi, d phi / d(w, a, b), d phi / d theta)` for data point `i`.
    fn phi(&self, z: &Vector, theta: f64, i: usize) -> (f64, Vector, f64) {
        let d = self.d();
        let xi = self.row(i);
        let (a, b) = (z[d], z[d + 1]);
        let s = z.rows(0, d).dot(&xi);
        let p = self.p;
        let q = 1.0 - p;
        let mut grad = Vector::zeros(d + 2);
        let (value, ds, dtheta);
        if self.labels[i] > 0.0 {
            value = q * (s - a).powi(2) - 2.0 * (1.0 + theta) * q * s - p * q * theta * theta;
            ds = 2.0 * q * (s - a) - 2.0 * (1.0 + theta) * q;
            grad[d] = -2.0 * q * (s - a);
            dtheta = -2.0 * q * s - 2.0 * p * q * theta;
        } else {
            value = p * (s - b).powi(2) + 2.0 * (1.0 + theta) * p * s - p * q * theta * theta;
            ds = 2.0 * p * (s - b) + 2.0 * (1.0 + theta) * p;
            grad[d + 1] = -2.0 * p * (s - b);
            dtheta = 2.0 * p * s - 2.0 * p * q * theta;
        }
        grad.rows_mut(0, d).axpy(ds, &xi, 0.0);
        (value, grad, dtheta)
    }

    fn outer_mean(&self, z: &Vector, theta: f64) -> (f64, Vector, f64) {
        let n = self.labels.len();
        let mut acc = (0.0, Vector::zeros(z.len()), 0.0);
        for i in 0..n {
            let (v, g, t) = self.phi(z, theta, i);
            acc.0 += v;
            acc.1 += g;
            acc.2 += t;
        }
        let nf = n as f64;
        (acc.0 / nf, acc.1 / nf, acc.2 / nf)
    }

    /// Training AUC of the scorer `w^T x` (ties count one half).
    pub fn train_auc(&self, w: &Vector) -> f64 {
        let scores: Vec<f64> = (0..self.labels.len()).map(|i| self.row(i).dot(w)).collect();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (_, si) in scores.iter().enumerate().filter(|(i, _)| self.labels[*i] > 0.0) {
            for (j, sj) in scores.iter().enumerate() {
                if self.labels[j] < 0.0 {
                    pairs += 1.0;
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        wins / pairs
    }
}

impl Problem for AucProblem {
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
        self.adapted(input, sample.index(self.labels.len()))
    }
    fn inner_jacobian(&self, input: &Vector, sample: &OracleSample) -> Matrix {
        self.adapted_jacobian(input, sample.index(self.labels.len()))
    }
    fn inner_mean(&self, input: &Vector) -> Option<Vector> {
        let n = self.labels.len();
        let sum = (0..n).fold(Vector::zeros(input.len()), |acc, i| acc + self.adapted(input, i));
        Some(sum / n as f64)
    }
    fn inner_mean_jacobian(&self, input: &Vector) -> Option<Matrix> {
        let n = self.labels.len();
        let k = input.len();
        let sum = (0..n).fold(Matrix::zeros(k, k), |acc, i| acc + self.adapted_jacobian(input, i));
        Some(sum / n as f64)
    }
    fn outer_value(&self, z: &Vector, y: &Vector, s: Option<&OracleSample>) -> f64 {
        match s {
            Some(s) => self.phi(z, y[0], s.index(self.labels.len())).0,
            None => self.outer_mean(z, y[0]).0,
        }
    }
    fn outer_grad1(&self, z: &Vector, y: &Vector, s: Option<&OracleSample>) -> Vector {
        match s {
            Some(s) => self.phi(z, y[0], s.index(self.labels.len())).1,
            None => self.outer_mean(z, y[0]).1,
        }
    }
    fn outer_grad2(&self, z: &Vector, y: &Vector, s: Option<&OracleSample>) -> Vector {
        let t = match s {
            Some(s) => self.phi(z, y[0], s.index(self.labels.len())).2,
            None => self.outer_mean(z, y[0]).2,
        };
        Vector::from_element(1, t)
    }
    fn default_start(&self) -> PrimalDualPoint {
        PrimalDualPoint::new(Vector::zeros(self.d() + 2), Vector::zeros(1))
    }
}
