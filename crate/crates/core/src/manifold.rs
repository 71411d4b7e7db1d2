//! Charts, metrics, Christoffel symbols and curvature for the supported
//! manifold families.
//!
//! Vectors live in a fixed four-component buffer; components at and beyond
//! the model dimension are kept at zero so that metric contractions over the
//! full buffer give the right answer.
//!
//! Charts:
//! - space forms of curvature `K = ±1` use the conformal chart
//!   `g = (2 / (1 + K|x|²))² δ`, i.e. stereographic projection from the
//!   south pole for the sphere and the Poincaré ball for hyperbolic space;
//! - circle factors use the angle coordinate with period `2π`.
//!
//! Curvature sign convention: `R(X,Y)Z = ∇_Y∇_X Z − ∇_X∇_Y Z + ∇_[X,Y] Z`,
//! so that on a space form `R(X,Y)Z = K(⟨X,Z⟩Y − ⟨Y,Z⟩X)` and in particular
//! `R(T,N)T = K N`. Sectional curvature is `⟨R(X,Y)X, Y⟩ / |X ∧ Y|²`.

use nalgebra::{Matrix3, Matrix4, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use thiserror::Error;

pub const MAX_DIM: usize = 4;

pub type Vector = Vector4<f64>;
pub type Matrix = Matrix4<f64>;
/// `gamma[a][(b, c)] = Γ^a_{bc}`.
pub type Christoffel = [Matrix; MAX_DIM];

/// Central-difference step for metric and connection derivatives.
pub const FD_STEP: f64 = 1e-5;
pub const XI_FLOOR: f64 = 1e-9;
const DEGENERATE_PLANE: f64 = 1e-12;
const BOUND_SAMPLES: usize = 1000;
const BOUND_SAFETY: f64 = 1.5;
const BOUND_SEED: u64 = 0x0005_eed0_fa11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("point {coords:?} is outside the chart domain of {family}")]
    Domain { family: String, coords: Vec<f64> },
    #[error("degenerate 2-plane: |X|²|Y|² − ⟨X,Y⟩² = {0:e}")]
    DegeneratePlane(f64),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Time dependence of a conformal or warping exponent `f`.
///
/// `f` is spatially constant in every family; only its time dependence varies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FPolicy {
    Zero,
    Linear { rate: f64 },
    /// Value integrated by the flow engine; independent of the `t` argument.
    Driven(f64),
}

impl FPolicy {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            FPolicy::Zero => 0.0,
            FPolicy::Linear { rate } => rate * t,
            FPolicy::Driven(f) => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Euclidean,
    /// Constant curvature `k` (±1) in the conformal chart, dimension 2 or 3.
    SpaceForm { k: f64 },
    /// One-dimensional flat circle; only meaningful as a product base.
    Circle { radius: f64 },
    Product { base: Box<MetricModel>, rho: f64 },
    Conformal { base: Box<MetricModel>, f: FPolicy },
    WarpedCircle { base: Box<MetricModel>, rho: f64, f: FPolicy },
}

/// How a chart coordinate may be translated when a curve closes up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    /// The metric is invariant under any translation of this coordinate.
    Translational,
    /// Angle coordinate of period `2π`.
    Angular,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub family: Family,
    pub dim: usize,
    /// Bound on `|R(X,Y,Z,W)|` over unit vectors.
    pub lambda_bound: f64,
    /// Upper bound on sectional curvature.
    pub xi_bound: f64,
}

fn block_dim(dim: usize) -> Matrix {
    let mut m = Matrix::zeros();
    for i in 0..dim {
        m[(i, i)] = 1.0;
    }
    m
}

fn truncate(p: &Vector, dim: usize) -> Vector {
    let mut q = Vector::zeros();
    for i in 0..dim {
        q[i] = p[i];
    }
    q
}

fn zero_christoffel() -> Christoffel {
    [Matrix::zeros(); MAX_DIM]
}

impl MetricModel {
    pub fn euclidean(dim: usize) -> Result<Self, ManifoldError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(ManifoldError::Invalid(format!("euclidean dim {dim} not in 1..=4")));
        }
        Ok(MetricModel { family: Family::Euclidean, dim, lambda_bound: 0.0, xi_bound: XI_FLOOR })
    }

    fn space_form(dim: usize, k: f64) -> Result<Self, ManifoldError> {
        if !(2..=3).contains(&dim) {
            return Err(ManifoldError::Invalid(format!("space form dim {dim} not in 2..=3")));
        }
        Ok(MetricModel {
            family: Family::SpaceForm { k },
            dim,
            lambda_bound: k.abs(),
            xi_bound: k.max(XI_FLOOR),
        })
    }

    pub fn sphere(dim: usize) -> Result<Self, ManifoldError> {
        Self::space_form(dim, 1.0)
    }

    pub fn hyperbolic(dim: usize) -> Result<Self, ManifoldError> {
        Self::space_form(dim, -1.0)
    }

    pub fn sphere3() -> Self {
        Self::space_form(3, 1.0).expect("dim 3")
    }

    pub fn hyperbolic3() -> Self {
        Self::space_form(3, -1.0).expect("dim 3")
    }

    pub fn circle(radius: f64) -> Result<Self, ManifoldError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ManifoldError::Invalid(format!("circle radius {radius} must be positive")));
        }
        Ok(MetricModel { family: Family::Circle { radius }, dim: 1, lambda_bound: 0.0, xi_bound: XI_FLOOR })
    }

    /// `base × S¹` with fiber radius `rho`; the fiber angle is the last coordinate.
    pub fn product(base: MetricModel, rho: f64) -> Result<Self, ManifoldError> {
        check_fiber(&base, rho)?;
        let dim = base.dim + 1;
        let (lambda_bound, xi_bound) = (base.lambda_bound, base.xi_bound);
        Ok(MetricModel { family: Family::Product { base: Box::new(base), rho }, dim, lambda_bound, xi_bound })
    }

    /// `exp(f(t)) g_base`.
    pub fn conformal(base: MetricModel, f: FPolicy) -> Result<Self, ManifoldError> {
        if base.dim < 2 {
            return Err(ManifoldError::Invalid("conformal base needs dim >= 2".into()));
        }
        let dim = base.dim;
        let mut m = MetricModel { family: Family::Conformal { base: Box::new(base), f }, dim, lambda_bound: 0.0, xi_bound: XI_FLOOR };
        m.estimate_bounds();
        Ok(m)
    }

    /// `g_base + exp(f(t)) rho² dσ²`.
    pub fn warped_circle(base: MetricModel, rho: f64, f: FPolicy) -> Result<Self, ManifoldError> {
        check_fiber(&base, rho)?;
        let dim = base.dim + 1;
        let mut m = MetricModel {
            family: Family::WarpedCircle { base: Box::new(base), rho, f },
            dim,
            lambda_bound: 0.0,
            xi_bound: XI_FLOOR,
        };
        m.estimate_bounds();
        Ok(m)
    }

    pub fn family_name(&self) -> String {
        match &self.family {
            Family::Euclidean => format!("euclidean{}", self.dim),
            Family::SpaceForm { k } if *k > 0.0 => format!("sphere{}", self.dim),
            Family::SpaceForm { .. } => format!("hyperbolic{}", self.dim),
            Family::Circle { .. } => "circle".into(),
            Family::Product { base, .. } => format!("{}xS1", base.family_name()),
            Family::Conformal { base, .. } => format!("conformal({})", base.family_name()),
            Family::WarpedCircle { base, .. } => format!("warped({}xS1)", base.family_name()),
        }
    }

    /// Current value of the time-dependent exponent, 0 for static families.
    pub fn f_value(&self, t: f64) -> f64 {
        match &self.family {
            Family::Conformal { f, .. } | Family::WarpedCircle { f, .. } => f.value(t),
            _ => 0.0,
        }
    }

    pub fn is_evolving(&self) -> bool {
        matches!(self.family, Family::Conformal { .. } | Family::WarpedCircle { .. })
    }

    /// Sets the driven exponent of an evolving family; no-op otherwise.
    pub fn set_driven_f(&mut self, value: f64) {
        if let Family::Conformal { f, .. } | Family::WarpedCircle { f, .. } = &mut self.family {
            *f = FPolicy::Driven(value);
        }
    }

    /// Index of the S¹ fiber coordinate for product-type families.
    pub fn fiber_index(&self) -> Option<usize> {
        match &self.family {
            Family::Product { base, .. } | Family::WarpedCircle { base, .. } => Some(base.dim),
            Family::Conformal { base, .. } => base.fiber_index(),
            _ => None,
        }
    }

    /// Metric coefficient of the fiber factor, `rho²` or `exp(f) rho²`.
    pub fn fiber_metric(&self, t: f64) -> Option<f64> {
        match &self.family {
            Family::Product { rho, .. } => Some(rho * rho),
            Family::WarpedCircle { rho, f, .. } => Some(f.value(t).exp() * rho * rho),
            Family::Conformal { base, f } => base.fiber_metric(t).map(|m| m * f.value(t).exp()),
            _ => None,
        }
    }

    /// Unscaled fiber radius.
    pub fn fiber_radius(&self) -> Option<f64> {
        match &self.family {
            Family::Product { rho, .. } | Family::WarpedCircle { rho, .. } => Some(*rho),
            Family::Conformal { base, .. } => base.fiber_radius(),
            _ => None,
        }
    }

    pub fn base(&self) -> Option<&MetricModel> {
        match &self.family {
            Family::Product { base, .. } | Family::Conformal { base, .. } | Family::WarpedCircle { base, .. } => Some(base),
            _ => None,
        }
    }

    pub fn coord_kind(&self, i: usize) -> CoordKind {
        if i >= self.dim {
            return CoordKind::Fixed;
        }
        match &self.family {
            Family::Euclidean => CoordKind::Translational,
            Family::SpaceForm { .. } => CoordKind::Fixed,
            Family::Circle { .. } => CoordKind::Angular,
            Family::Product { base, .. } | Family::WarpedCircle { base, .. } => {
                if i < base.dim {
                    base.coord_kind(i)
                } else {
                    CoordKind::Angular
                }
            }
            Family::Conformal { base, .. } => base.coord_kind(i),
        }
    }

    /// Whether translating a whole curve by `shift` is an isometry of the chart.
    pub fn admits_shift(&self, shift: &Vector) -> bool {
        (0..MAX_DIM).all(|i| {
            let s = shift[i];
            match self.coord_kind(i) {
                CoordKind::Translational => s.is_finite(),
                CoordKind::Fixed => s == 0.0,
                CoordKind::Angular => {
                    let turns = s / TAU;
                    (turns - turns.round()).abs() < 1e-9
                }
            }
        })
    }

    pub fn check_point(&self, p: &Vector) -> Result<(), ManifoldError> {
        let finite = (0..self.dim).all(|i| p[i].is_finite());
        let inside = finite
            && match &self.family {
                Family::SpaceForm { k } if *k < 0.0 => {
                    let r2: f64 = (0..self.dim).map(|i| p[i] * p[i]).sum();
                    r2 < 1.0
                }
                Family::Product { base, .. } | Family::Conformal { base, .. } | Family::WarpedCircle { base, .. } => {
                    return base.check_point(&truncate(p, base.dim)).map_err(|_| self.domain_error(p));
                }
                _ => true,
            };
        if inside {
            Ok(())
        } else {
            Err(self.domain_error(p))
        }
    }

    fn domain_error(&self, p: &Vector) -> ManifoldError {
        ManifoldError::Domain { family: self.family_name(), coords: p.as_slice()[..self.dim].to_vec() }
    }

    pub fn metric_at(&self, p: &Vector, t: f64) -> Result<Matrix, ManifoldError> {
        self.check_point(p)?;
        Ok(self.metric_unchecked(p, t))
    }

    /// Metric without the domain check; callers validate points once per node.
    pub fn metric_unchecked(&self, p: &Vector, t: f64) -> Matrix {
        match &self.family {
            Family::Euclidean => block_dim(self.dim),
            Family::SpaceForm { k } => {
                let (lambda, _) = space_form_factor(*k, p, self.dim);
                block_dim(self.dim) * (lambda * lambda)
            }
            Family::Circle { radius } => {
                let mut m = Matrix::zeros();
                m[(0, 0)] = radius * radius;
                m
            }
            Family::Product { base, .. } | Family::WarpedCircle { base, .. } => {
                let mut m = base.metric_unchecked(&truncate(p, base.dim), t);
                m[(base.dim, base.dim)] = self.fiber_metric(t).expect("fiber family");
                m
            }
            Family::Conformal { base, f } => base.metric_unchecked(p, t) * f.value(t).exp(),
        }
    }

    /// Analytic Christoffel symbols. The exponent `f` is spatially constant,
    /// so evolving families share the connection of their (product) base.
    pub fn christoffel(&self, p: &Vector, t: f64) -> Result<Christoffel, ManifoldError> {
        self.check_point(p)?;
        Ok(self.christoffel_unchecked(p, t))
    }

    #[allow(clippy::only_used_in_recursion)]
    pub fn christoffel_unchecked(&self, p: &Vector, t: f64) -> Christoffel {
        match &self.family {
            Family::Euclidean | Family::Circle { .. } => zero_christoffel(),
            Family::SpaceForm { k } => {
                let (_, grad) = space_form_factor(*k, p, self.dim);
                let mut gamma = zero_christoffel();
                for (a, ga) in gamma.iter_mut().enumerate().take(self.dim) {
                    for b in 0..self.dim {
                        for c in 0..self.dim {
                            let mut v = 0.0;
                            if a == b {
                                v += grad[c];
                            }
                            if a == c {
                                v += grad[b];
                            }
                            if b == c {
                                v -= grad[a];
                            }
                            ga[(b, c)] = v;
                        }
                    }
                }
                gamma
            }
            Family::Product { base, .. } | Family::WarpedCircle { base, .. } => {
                base.christoffel_unchecked(&truncate(p, base.dim), t)
            }
            Family::Conformal { base, .. } => base.christoffel_unchecked(p, t),
        }
    }

    /// Christoffel symbols from central differences of the metric.
    pub fn christoffel_fd(&self, p: &Vector, t: f64) -> Result<Christoffel, ManifoldError> {
        self.check_point(p)?;
        let n = self.dim;
        let mut dg = [Matrix::zeros(); MAX_DIM];
        for (c, dgc) in dg.iter_mut().enumerate().take(n) {
            let mut e = Vector::zeros();
            e[c] = FD_STEP;
            let plus = self.metric_at(&(p + e), t)?;
            let minus = self.metric_at(&(p - e), t)?;
            *dgc = (plus - minus) / (2.0 * FD_STEP);
        }
        let ginv = self.inverse_metric(&self.metric_unchecked(p, t));
        let mut gamma = zero_christoffel();
        for (a, ga) in gamma.iter_mut().enumerate().take(n) {
            for b in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for d in 0..n {
                        s += ginv[(a, d)] * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)]);
                    }
                    ga[(b, c)] = 0.5 * s;
                }
            }
        }
        Ok(gamma)
    }

    /// Inverse of the active `dim × dim` block, zero-padded.
    pub fn inverse_metric(&self, g: &Matrix) -> Matrix {
        let mut padded = *g;
        for i in self.dim..MAX_DIM {
            padded[(i, i)] = 1.0;
        }
        let mut inv = padded.try_inverse().expect("metric is positive definite");
        for i in self.dim..MAX_DIM {
            inv[(i, i)] = 0.0;
        }
        inv
    }

    pub fn inner(&self, p: &Vector, x: &Vector, y: &Vector, t: f64) -> Result<f64, ManifoldError> {
        Ok(x.dot(&(self.metric_at(p, t)? * y)))
    }

    pub fn norm(&self, p: &Vector, x: &Vector, t: f64) -> Result<f64, ManifoldError> {
        Ok(self.inner(p, x, x, t)?.max(0.0).sqrt())
    }

    /// `R(X,Y)Z` in the sign convention of the module docs.
    pub fn riemann_apply(&self, p: &Vector, x: &Vector, y: &Vector, z: &Vector, t: f64) -> Result<Vector, ManifoldError> {
        self.check_point(p)?;
        match &self.family {
            Family::Euclidean | Family::Circle { .. } => Ok(Vector::zeros()),
            Family::SpaceForm { k } => {
                let g = self.metric_unchecked(p, t);
                let xz = x.dot(&(g * z));
                let yz = y.dot(&(g * z));
                Ok((y * xz - x * yz) * *k)
            }
            _ => self.riemann_fd(p, x, y, z, t),
        }
    }

    /// `R(X,Y)Z` from central differences of the analytic connection.
    pub fn riemann_fd(&self, p: &Vector, x: &Vector, y: &Vector, z: &Vector, t: f64) -> Result<Vector, ManifoldError> {
        let n = self.dim;
        let gamma = self.christoffel(p, t)?;
        let mut dgamma = [zero_christoffel(); MAX_DIM];
        for (c, slot) in dgamma.iter_mut().enumerate().take(n) {
            let mut e = Vector::zeros();
            e[c] = FD_STEP;
            let plus = self.christoffel(&(p + e), t)?;
            let minus = self.christoffel(&(p - e), t)?;
            for a in 0..n {
                slot[a] = (plus[a] - minus[a]) / (2.0 * FD_STEP);
            }
        }
        // Standard components (R(∂c,∂d)∂b)^a; the module convention is its negative.
        let mut out = Vector::zeros();
        for a in 0..n {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let w = x[c] * y[d] * z[b];
                        if w == 0.0 {
                            continue;
                        }
                        let mut r = dgamma[c][a][(d, b)] - dgamma[d][a][(c, b)];
                        for e in 0..n {
                            r += gamma[a][(c, e)] * gamma[e][(d, b)] - gamma[a][(d, e)] * gamma[e][(c, b)];
                        }
                        s += w * r;
                    }
                }
            }
            out[a] = -s;
        }
        Ok(out)
    }

    /// `R(X,Y,Z,W) = ⟨R(X,Y)Z, W⟩`.
    pub fn riemann4(&self, p: &Vector, x: &Vector, y: &Vector, z: &Vector, w: &Vector, t: f64) -> Result<f64, ManifoldError> {
        let r = self.riemann_apply(p, x, y, z, t)?;
        self.inner(p, &r, w, t)
    }

    pub fn sectional(&self, p: &Vector, x: &Vector, y: &Vector, t: f64) -> Result<f64, ManifoldError> {
        let g = self.metric_at(p, t)?;
        let xx = x.dot(&(g * x));
        let yy = y.dot(&(g * y));
        let xy = x.dot(&(g * y));
        let denom = xx * yy - xy * xy;
        if denom < DEGENERATE_PLANE {
            return Err(ManifoldError::DegeneratePlane(denom));
        }
        let r = self.riemann_apply(p, x, y, x, t)?;
        Ok(r.dot(&(g * y)) / denom)
    }

    /// Random chart point, used for bound estimation and property tests.
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> Vector {
        let mut p = Vector::zeros();
        match &self.family {
            Family::Euclidean => {
                for i in 0..self.dim {
                    p[i] = rng.gen_range(-2.0..2.0);
                }
            }
            Family::SpaceForm { k } => {
                let rmax = if *k > 0.0 { 3.0 } else { 0.95 };
                loop {
                    for i in 0..self.dim {
                        p[i] = rng.gen_range(-rmax..rmax);
                    }
                    if p.norm() < rmax {
                        break;
                    }
                }
            }
            Family::Circle { .. } => p[0] = rng.gen_range(0.0..TAU),
            Family::Product { base, .. } | Family::WarpedCircle { base, .. } => {
                p = base.sample_point(rng);
                p[base.dim] = rng.gen_range(0.0..TAU);
            }
            Family::Conformal { base, .. } => p = base.sample_point(rng),
        }
        p
    }

    /// Random vector of unit length under the metric at `p`.
    pub fn sample_unit<R: Rng>(&self, p: &Vector, t: f64, rng: &mut R) -> Vector {
        let g = self.metric_unchecked(p, t);
        loop {
            let mut v = Vector::zeros();
            for i in 0..self.dim {
                v[i] = rng.gen_range(-1.0..1.0);
            }
            let n2 = v.dot(&(g * v));
            if n2 > 1e-6 {
                return v / n2.sqrt();
            }
        }
    }

    /// Sampled Λ and Ξ with the safety factor, evaluated at `t = 0`.
    fn estimate_bounds(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(BOUND_SEED);
        let mut lambda: f64 = 0.0;
        let mut xi = f64::NEG_INFINITY;
        for _ in 0..BOUND_SAMPLES {
            let p = self.sample_point(&mut rng);
            let [x, y, z, w] = [0; 4].map(|_| self.sample_unit(&p, 0.0, &mut rng));
            if let Ok(r) = self.riemann4(&p, &x, &y, &z, &w, 0.0) {
                lambda = lambda.max(r.abs());
            }
            if let Ok(s) = self.sectional(&p, &x, &y, 0.0) {
                xi = xi.max(s);
            }
        }
        self.lambda_bound = BOUND_SAFETY * lambda;
        self.xi_bound = (BOUND_SAFETY * xi).max(XI_FLOOR);
    }
}

fn check_fiber(base: &MetricModel, rho: f64) -> Result<(), ManifoldError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(ManifoldError::Invalid(format!("fiber radius {rho} must be positive")));
    }
    if base.dim + 1 > MAX_DIM {
        return Err(ManifoldError::Invalid("product dimension exceeds 4".into()));
    }
    if base.fiber_index().is_some() || base.is_evolving() {
        return Err(ManifoldError::Invalid("product base must be a static non-product model".into()));
    }
    Ok(())
}

/// Conformal factor `λ = 2/(1 + K|x|²)` and `∂ log λ`.
fn space_form_factor(k: f64, p: &Vector, dim: usize) -> (f64, Vector) {
    let r2: f64 = (0..dim).map(|i| p[i] * p[i]).sum();
    let s = 1.0 + k * r2;
    let mut grad = Vector::zeros();
    for i in 0..dim {
        grad[i] = -2.0 * k * p[i] / s;
    }
    (2.0 / s, grad)
}

/// Inverse stereographic projection of a 3-dimensional chart point onto the
/// unit sphere in R⁴ (pole at `y₄ = −1`).
pub fn stereo_to_sphere(p: &Vector) -> [f64; 4] {
    let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let s = 1.0 + r2;
    [2.0 * p[0] / s, 2.0 * p[1] / s, 2.0 * p[2] / s, (1.0 - r2) / s]
}

pub fn sphere_to_stereo(y: [f64; 4]) -> Vector {
    let s = 1.0 + y[3];
    Vector::new(y[0] / s, y[1] / s, y[2] / s, 0.0)
}

/// Oriented unit binormal completing `(T, N)` in a 3-dimensional chart.
pub fn binormal3(g: &Matrix, t: &Vector, n: &Vector) -> Vector {
    let g3: Matrix3<f64> = g.fixed_view::<3, 3>(0, 0).into();
    let det = g3.determinant();
    let inv = g3.try_inverse().expect("metric is positive definite");
    let cross = nalgebra::Vector3::new(t[0], t[1], t[2]).cross(&nalgebra::Vector3::new(n[0], n[1], n[2]));
    let b = inv * cross * det.sqrt();
    Vector::new(b[0], b[1], b[2], 0.0)
}

/// `Γ(p)(X, Y)^a = Γ^a_{bc} X^b Y^c`.
pub fn contract(gamma: &Christoffel, dim: usize, x: &Vector, y: &Vector) -> Vector {
    let mut out = Vector::zeros();
    for a in 0..dim {
        out[a] = x.dot(&(gamma[a] * y));
    }
    out
}
