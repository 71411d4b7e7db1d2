//! Discrete closed curves and their intrinsic geometry: speed, arclength,
//! unit tangent, iterated covariant derivatives `DⁿT/∂sⁿ`, curvature and the
//! Frenet frame.
//!
//! A curve is `N` chart points on the periodic parameter grid
//! `u_i = i·2π/N`. A curve may close only up to a chart translation
//! (`shift`), which is how windings on torus-like products and screw
//! curves in flat space are represented: node `i + N` is node `i` plus
//! `shift`. Vector fields along the curve are unaffected by the shift.

use crate::manifold::{binormal3, contract, Christoffel, ManifoldError, Matrix, MetricModel, Vector};
use crate::par::Exec;
use crate::spline::{gauss5, PeriodicSpline};
use std::f64::consts::TAU;
use thiserror::Error;

/// Below this curvature the Frenet normal and torsion are not defined.
pub const K_FLOOR: f64 = 1e-7;
pub const SPEED_FLOOR: f64 = 1e-10;
pub const MIN_NODES: usize = 16;
pub const DEFAULT_N_MAX: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("curve needs at least {MIN_NODES} nodes, got {0}")]
    TooFewNodes(usize),
    #[error("curve has dimension {curve} but the model has dimension {model}")]
    DimensionMismatch { curve: usize, model: usize },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("degenerate curve: speed {speed:e} at node {node}")]
    Degenerate { node: usize, speed: f64 },
    #[error("closure shift {0:?} is not an isometry of the chart")]
    BadShift(Vec<f64>),
    #[error("Frenet frame needs a 3-dimensional model, got dimension {0}")]
    FrenetDimension(usize),
    #[error("Frenet frame undefined: curvature is below {K_FLOOR:e} at every node")]
    FrameUndefined,
    #[error("resample failed: {0}")]
    Resample(String),
    #[error("model {0} has no S¹ factor")]
    NoFiber(String),
    #[error("n_max must be in 1..=4, got {0}")]
    NMax(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve {
    nodes: Vec<Vector>,
    dim: usize,
    shift: Vector,
}

impl DiscreteCurve {
    pub fn new(nodes: Vec<Vector>, dim: usize) -> Result<Self, CurveError> {
        Self::with_shift(nodes, dim, Vector::zeros())
    }

    pub fn with_shift(nodes: Vec<Vector>, dim: usize, shift: Vector) -> Result<Self, CurveError> {
        if nodes.len() < MIN_NODES {
            return Err(CurveError::TooFewNodes(nodes.len()));
        }
        Ok(DiscreteCurve { nodes, dim, shift })
    }

    /// Builds `n` nodes from a parametrisation `u ↦ γ(u)`, `u ∈ [0, 2π)`.
    pub fn from_fn<F: Fn(f64) -> Vector>(n: usize, dim: usize, shift: Vector, f: F) -> Result<Self, CurveError> {
        let du = TAU / n as f64;
        Self::with_shift((0..n).map(|i| f(i as f64 * du)).collect(), dim, shift)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Vector] {
        &self.nodes
    }

    pub fn shift(&self) -> &Vector {
        &self.shift
    }

    pub fn du(&self) -> f64 {
        TAU / self.nodes.len() as f64
    }

    /// Node at a periodic index, with the closure shift applied across wraps.
    pub fn node(&self, i: isize) -> Vector {
        let n = self.nodes.len() as isize;
        let wraps = i.div_euclid(n);
        let base = self.nodes[i.rem_euclid(n) as usize];
        if wraps == 0 {
            base
        } else {
            base + self.shift * wraps as f64
        }
    }

    /// Returns a curve with every node displaced by `delta[i]`.
    pub fn displaced(&self, delta: &[Vector]) -> DiscreteCurve {
        let nodes = self.nodes.iter().zip(delta).map(|(p, d)| p + d).collect();
        DiscreteCurve { nodes, dim: self.dim, shift: self.shift }
    }

    pub fn map_nodes<F: Fn(&Vector) -> Vector>(&self, f: F) -> DiscreteCurve {
        DiscreteCurve { nodes: self.nodes.iter().map(f).collect(), dim: self.dim, shift: self.shift }
    }

    pub fn validate(&self, model: &MetricModel) -> Result<(), CurveError> {
        if self.dim != model.dim {
            return Err(CurveError::DimensionMismatch { curve: self.dim, model: model.dim });
        }
        if !model.admits_shift(&self.shift) {
            return Err(CurveError::BadShift(self.shift.as_slice()[..self.dim].to_vec()));
        }
        for p in &self.nodes {
            model.check_point(p)?;
        }
        Ok(())
    }

    /// Largest Euclidean chart norm of any node.
    pub fn max_chart_radius(&self) -> f64 {
        self.nodes.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Per-node geometry of a curve under a model at a fixed time.
#[derive(Debug, Clone)]
pub struct CurveGeometry {
    pub t: f64,
    pub dim: usize,
    pub du: f64,
    pub points: Vec<Vector>,
    pub metric: Vec<Matrix>,
    pub christoffel: Vec<Christoffel>,
    /// `v_i = |∂γ/∂u|` from the centred difference.
    pub speed: Vec<f64>,
    /// `Δs_i = v_i Δu`.
    pub ds: Vec<f64>,
    pub tangent: Vec<Vector>,
    /// `derivs[n - 1][i] = (DⁿT/∂sⁿ)_i`.
    pub derivs: Vec<Vec<Vector>>,
    pub curvature: Vec<f64>,
    /// Length from a fourth-order speed stencil; see `geometry`.
    pub length: f64,
    /// `∫k² ds`.
    pub bending_energy: f64,
}

impl CurveGeometry {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inner_at(&self, i: usize, a: &Vector, b: &Vector) -> f64 {
        a.dot(&(self.metric[i] * b))
    }

    pub fn norm_at(&self, i: usize, a: &Vector) -> f64 {
        self.inner_at(i, a, a).max(0.0).sqrt()
    }

    /// `(DW/∂s)_i = (W_{i+1} − W_{i−1}) / (2Δs_i) + Γ(p_i)(T_i, W_i)`.
    pub fn covariant_ds(&self, field: &[Vector]) -> Vec<Vector> {
        self.covariant_ds_with(Exec::default(), field)
    }

    pub fn covariant_ds_with(&self, exec: Exec, field: &[Vector]) -> Vec<Vector> {
        let n = self.len();
        exec.map(n, |i| {
            let next = field[(i + 1) % n];
            let prev = field[(i + n - 1) % n];
            (next - prev) / (2.0 * self.ds[i]) + contract(&self.christoffel[i], self.dim, &self.tangent[i], &field[i])
        })
    }

    /// Centred derivative of a scalar node field in arclength.
    pub fn scalar_ds(&self, field: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n).map(|i| (field[(i + 1) % n] - field[(i + n - 1) % n]) / (2.0 * self.ds[i])).collect()
    }

    /// The curve shortening velocity `DT/∂s`.
    pub fn velocity(&self) -> &[Vector] {
        &self.derivs[0]
    }

    pub fn n_max(&self) -> usize {
        self.derivs.len()
    }

    /// `sup_i |DⁿT/∂sⁿ|_i`.
    pub fn sup_deriv(&self, n: usize) -> f64 {
        self.derivs[n - 1].iter().enumerate().map(|(i, d)| self.norm_at(i, d)).fold(0.0, f64::max)
    }

    pub fn max_k2(&self) -> f64 {
        self.curvature.iter().map(|k| k * k).fold(0.0, f64::max)
    }

    pub fn max_k(&self) -> f64 {
        self.curvature.iter().copied().fold(0.0, f64::max)
    }

    /// `∫|DⁿT/∂sⁿ|² ds`.
    pub fn deriv_energy(&self, n: usize) -> f64 {
        self.derivs[n - 1].iter().enumerate().map(|(i, d)| self.inner_at(i, d, d) * self.ds[i]).sum()
    }

    /// Unit normal `JT` with `det[T, JT] > 0`; two-dimensional models only.
    pub fn oriented_normal(&self, i: usize) -> Option<Vector> {
        if self.dim != 2 {
            return None;
        }
        let w = self.metric[i] * self.tangent[i];
        let n = Vector::new(-w[1], w[0], 0.0, 0.0);
        Some(n / self.norm_at(i, &n))
    }

    /// Curvature signed against `JT` in dimension 2.
    pub fn signed_curvature(&self) -> Option<Vec<f64>> {
        if self.dim != 2 {
            return None;
        }
        Some(
            (0..self.len())
                .map(|i| {
                    let n = self.oriented_normal(i).expect("dim 2");
                    self.inner_at(i, &self.derivs[0][i], &n)
                })
                .collect(),
        )
    }
}

pub fn geometry(curve: &DiscreteCurve, model: &MetricModel, t: f64, n_max: usize) -> Result<CurveGeometry, CurveError> {
    geometry_with(Exec::default(), curve, model, t, n_max)
}

/// Computes speed, tangent, `DⁿT/∂sⁿ` for `n = 1..=n_max`, curvature, length
/// and bending energy.
///
/// All derivatives are centred second-order differences in `u`, iterated for
/// higher `n`. The length uses the fourth-order centred speed
/// `|(−γ_{i+2} + 8γ_{i+1} − 8γ_{i−1} + γ_{i−2}) / 12Δu|` so that the
/// trapezoidal sum resolves `L` well below the second-order truncation of `v_i`.
pub fn geometry_with(exec: Exec, curve: &DiscreteCurve, model: &MetricModel, t: f64, n_max: usize) -> Result<CurveGeometry, CurveError> {
    if !(1..=4).contains(&n_max) {
        return Err(CurveError::NMax(n_max));
    }
    if curve.dim != model.dim {
        return Err(CurveError::DimensionMismatch { curve: curve.dim, model: model.dim });
    }
    for p in &curve.nodes {
        model.check_point(p)?;
    }
    let n = curve.len();
    let du = curve.du();
    let dim = model.dim;
    let base = exec.map(n, |i| {
        let ii = i as isize;
        let p = curve.nodes[i];
        let g = model.metric_unchecked(&p, t);
        let gamma = model.christoffel_unchecked(&p, t);
        let d2 = (curve.node(ii + 1) - curve.node(ii - 1)) / (2.0 * du);
        let d4 = (curve.node(ii - 2) - curve.node(ii + 2) + (curve.node(ii + 1) - curve.node(ii - 1)) * 8.0) / (12.0 * du);
        let v = d2.dot(&(g * d2)).max(0.0).sqrt();
        let v4 = d4.dot(&(g * d4)).max(0.0).sqrt();
        (g, gamma, v, v4, d2)
    });
    if let Some((node, b)) = base.iter().enumerate().find(|(_, b)| !(b.2 > SPEED_FLOOR)) {
        return Err(CurveError::Degenerate { node, speed: b.2 });
    }
    let mut metric = Vec::with_capacity(n);
    let mut christoffel = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut tangent = Vec::with_capacity(n);
    let mut length = 0.0;
    for (g, gamma, v, v4, d2) in base {
        metric.push(g);
        christoffel.push(gamma);
        speed.push(v);
        tangent.push(d2 / v);
        length += v4 * du;
    }
    let ds: Vec<f64> = speed.iter().map(|v| v * du).collect();
    let mut geom = CurveGeometry {
        t,
        dim,
        du,
        points: curve.nodes.clone(),
        metric,
        christoffel,
        speed,
        ds,
        tangent,
        derivs: Vec::with_capacity(n_max),
        curvature: Vec::new(),
        length,
        bending_energy: 0.0,
    };
    let mut field = geom.tangent.clone();
    for _ in 0..n_max {
        field = geom.covariant_ds_with(exec, &field);
        geom.derivs.push(field.clone());
    }
    geom.curvature = (0..n).map(|i| geom.norm_at(i, &geom.derivs[0][i])).collect();
    geom.bending_energy = geom.curvature.iter().zip(&geom.ds).map(|(k, ds)| k * k * ds).sum();
    Ok(geom)
}

/// Frenet normal, binormal and torsion per node.
#[derive(Debug, Clone)]
pub struct Frenet {
    pub normal: Vec<Vector>,
    pub binormal: Vec<Vector>,
    /// `None` where `k ≤ K_FLOOR`.
    pub torsion: Vec<Option<f64>>,
}

/// Frenet frame of a curve in a 3-dimensional model.
///
/// Where `k_i ≤ K_FLOOR` the normal is carried over from the nearest node
/// with a defined normal, re-orthogonalised against `T_i`, and the torsion
/// is left undefined.
pub fn frenet(geom: &CurveGeometry) -> Result<Frenet, CurveError> {
    if geom.dim != 3 {
        return Err(CurveError::FrenetDimension(geom.dim));
    }
    let n = geom.len();
    let defined: Vec<bool> = geom.curvature.iter().map(|k| *k > K_FLOOR).collect();
    if !defined.iter().any(|d| *d) {
        return Err(CurveError::FrameUndefined);
    }
    let mut normal: Vec<Option<Vector>> = (0..n)
        .map(|i| defined[i].then(|| geom.derivs[0][i] / geom.curvature[i]))
        .collect();
    if defined.iter().any(|d| !d) {
        normal = continue_normals(geom, &normal);
    }
    let normal: Vec<Vector> = normal.into_iter().map(|v| v.expect("filled")).collect();
    let binormal: Vec<Vector> = (0..n).map(|i| binormal3(&geom.metric[i], &geom.tangent[i], &normal[i])).collect();
    let dn = geom.covariant_ds(&normal);
    let torsion = (0..n)
        .map(|i| {
            defined[i].then(|| {
                let w = dn[i] + geom.tangent[i] * geom.curvature[i];
                geom.inner_at(i, &w, &binormal[i])
            })
        })
        .collect();
    Ok(Frenet { normal, binormal, torsion })
}

fn continue_normals(geom: &CurveGeometry, normal: &[Option<Vector>]) -> Vec<Option<Vector>> {
    let n = geom.len();
    let project = |i: usize, v: Vector| {
        let t = geom.tangent[i];
        let w = v - t * geom.inner_at(i, &v, &t);
        w / geom.norm_at(i, &w)
    };
    // Sweep forward and backward, keeping the carried vector from the nearer source.
    let mut best: Vec<Option<(usize, Vector)>> = normal.iter().map(|v| v.map(|v| (0, v))).collect();
    for dir in [1isize, -1] {
        let start = (0..n).find(|&i| normal[i].is_some()).expect("some normal defined");
        let mut carried = (0usize, normal[start].expect("defined"));
        for step in 1..=n {
            let i = (start as isize + dir * step as isize).rem_euclid(n as isize) as usize;
            if let Some(v) = normal[i] {
                carried = (0, v);
                continue;
            }
            carried = (carried.0 + 1, project(i, carried.1));
            match best[i] {
                Some((d, _)) if d <= carried.0 => {}
                _ => best[i] = Some(carried),
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, v)| v)).collect()
}

/// Repositions the nodes uniformly in arclength along the periodic cubic
/// interpolant of the chart coordinates, keeping node 0 fixed.
pub fn resample_arclength(curve: &DiscreteCurve, model: &MetricModel, t: f64) -> Result<DiscreteCurve, CurveError> {
    resample_arclength_with(Exec::default(), curve, model, t)
}

pub fn resample_arclength_with(exec: Exec, curve: &DiscreteCurve, model: &MetricModel, t: f64) -> Result<DiscreteCurve, CurveError> {
    let interp = CurveInterpolant::new(curve);
    let n = curve.len();
    let du = curve.du();
    let seg: Vec<Result<f64, CurveError>> = exec.map(n, |i| {
        let a = i as f64 * du;
        interp.arclength(model, t, a, a + du)
    });
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0.0);
    for s in seg {
        let s = s?;
        if !(s > 0.0) {
            return Err(CurveError::Resample("non-positive interval length".into()));
        }
        cumulative.push(cumulative.last().expect("non-empty") + s);
    }
    let total = cumulative[n];
    let nodes: Vec<Result<Vector, CurveError>> = exec.map(n, |j| {
        if j == 0 {
            return Ok(curve.nodes[0]);
        }
        let target = total * j as f64 / n as f64;
        let i = cumulative.partition_point(|s| *s <= target).saturating_sub(1).min(n - 1);
        let u = interp.invert_arclength(model, t, i as f64 * du, du, target - cumulative[i])?;
        let p = interp.position(u);
        model.check_point(&p).map_err(|e| CurveError::Resample(e.to_string()))?;
        Ok(p)
    });
    let nodes = nodes.into_iter().collect::<Result<Vec<_>, _>>()?;
    DiscreteCurve::with_shift(nodes, curve.dim, curve.shift)
}

/// Periodic cubic interpolant `u ↦ γ(u)` of a discrete curve.
#[derive(Debug, Clone)]
pub struct CurveInterpolant {
    splines: Vec<PeriodicSpline>,
    shift: Vector,
    dim: usize,
}

impl CurveInterpolant {
    pub fn new(curve: &DiscreteCurve) -> Self {
        let n = curve.len();
        let du = curve.du();
        let splines = (0..curve.dim)
            .map(|c| {
                let vals = (0..n).map(|i| curve.nodes[i][c] - curve.shift[c] * i as f64 / n as f64).collect();
                PeriodicSpline::new(vals, du)
            })
            .collect();
        CurveInterpolant { splines, shift: curve.shift, dim: curve.dim }
    }

    pub fn position(&self, u: f64) -> Vector {
        let mut p = self.shift * (u / TAU);
        for (c, s) in self.splines.iter().enumerate() {
            p[c] += s.eval(u);
        }
        p
    }

    pub fn derivative(&self, u: f64) -> Vector {
        let mut d = self.shift / TAU;
        for (c, s) in self.splines.iter().enumerate() {
            d[c] += s.derivative(u);
        }
        d
    }

    pub fn speed(&self, model: &MetricModel, t: f64, u: f64) -> Result<f64, CurveError> {
        let p = self.position(u);
        model.check_point(&p).map_err(|e| CurveError::Resample(e.to_string()))?;
        let d = self.derivative(u);
        let v = d.dot(&(model.metric_unchecked(&p, t) * d)).max(0.0).sqrt();
        if v <= 1e-12 {
            return Err(CurveError::Resample(format!("interpolant is singular near u = {u:.6}")));
        }
        Ok(v)
    }

    pub fn arclength(&self, model: &MetricModel, t: f64, a: f64, b: f64) -> Result<f64, CurveError> {
        let mut err = None;
        let s = gauss5(a, b, |u| match self.speed(model, t, u) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                0.0
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(s),
        }
    }

    /// Full length by composite Gauss quadrature with `panels` panels.
    pub fn length(&self, model: &MetricModel, t: f64, panels: usize) -> Result<f64, CurveError> {
        let h = TAU / panels as f64;
        (0..panels).map(|i| self.arclength(model, t, i as f64 * h, (i + 1) as f64 * h)).sum()
    }

    /// Finds `u ∈ [a, a + width]` with `∫_a^u v = target` (Newton with bisection guard).
    fn invert_arclength(&self, model: &MetricModel, t: f64, a: f64, width: f64, target: f64) -> Result<f64, CurveError> {
        let total = self.arclength(model, t, a, a + width)?;
        let (mut lo, mut hi) = (a, a + width);
        let mut u = a + width * (target / total).clamp(0.0, 1.0);
        for _ in 0..50 {
            let f = self.arclength(model, t, a, u)? - target;
            if f.abs() <= 1e-15 * total.max(1.0) {
                break;
            }
            if f > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let v = self.speed(model, t, u)?;
            let next = u - f / v;
            u = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        debug_assert!(self.dim > 0);
        Ok(u)
    }
}

/// Ramp heights `h_i = ⟨π_*T_i, U⟩` in the S¹ factor metric.
#[derive(Debug, Clone)]
pub struct RampContext {
    pub heights: Vec<f64>,
    pub mu: f64,
    pub argmin: usize,
    pub is_ramp: bool,
    /// Sign of the unit fiber field `U` relative to `+∂/∂σ`.
    pub orientation: f64,
}

pub fn ramp_height(curve: &DiscreteCurve, geom: &CurveGeometry, model: &MetricModel) -> Result<RampContext, CurveError> {
    let (fi, fm) = match (model.fiber_index(), model.fiber_metric(geom.t)) {
        (Some(i), Some(m)) => (i, m),
        _ => return Err(CurveError::NoFiber(model.family_name())),
    };
    let scale = fm.sqrt();
    let raw: Vec<f64> = geom.tangent.iter().map(|t| scale * t[fi]).collect();
    let orientation = if curve.shift[fi] != 0.0 {
        curve.shift[fi].signum()
    } else if raw.iter().sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let heights: Vec<f64> = raw.iter().map(|h| h * orientation).collect();
    let (argmin, mu) = heights
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, h)| if h < acc.1 { (i, h) } else { acc });
    Ok(RampContext { heights, mu, argmin, is_ramp: mu > 0.0, orientation })
}
