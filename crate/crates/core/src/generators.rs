//! Initial curves.

use crate::curve::{CurveError, DiscreteCurve};
use crate::manifold::{sphere_to_stereo, Family, MetricModel, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("cannot read points file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("points file {path}, line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}")]
    Unsupported(String),
}

/// Chart point with the given leading coordinates.
fn point(xs: &[f64]) -> Vector {
    let mut p = Vector::zeros();
    for (i, x) in xs.iter().enumerate() {
        p[i] = *x;
    }
    p
}

pub fn circle(n: usize, dim: usize, radius: f64) -> Result<DiscreteCurve, CurveError> {
    DiscreteCurve::from_fn(n, dim, Vector::zeros(), |u| point(&[radius * u.cos(), radius * u.sin()]))
}

pub fn ellipse(n: usize, dim: usize, a: f64, b: f64) -> Result<DiscreteCurve, CurveError> {
    DiscreteCurve::from_fn(n, dim, Vector::zeros(), |u| point(&[a * u.cos(), b * u.sin()]))
}

/// Circle with radial profile `r(u) = R (1 + amp sin(mode u))`, plus an
/// optional seeded smooth perturbation of size `noise` over modes 2..=6
/// (out of the plane as well when `dim ≥ 3`).
pub fn perturbed_circle(n: usize, dim: usize, radius: f64, amp: f64, mode: u32, noise: f64, seed: u64) -> Result<DiscreteCurve, CurveError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64, f64, f64)> = (2..=6)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    DiscreteCurve::from_fn(n, dim, Vector::zeros(), |u| {
        let mut r = 1.0 + amp * (mode as f64 * u).sin();
        let mut z = 0.0;
        for (j, (a, b, c, d)) in coeffs.iter().enumerate() {
            let m = (j + 2) as f64;
            let w = noise / (m * m);
            r += w * (a * (m * u).cos() + b * (m * u).sin());
            z += w * (c * (m * u).cos() + d * (m * u).sin());
        }
        let mut p = point(&[radius * r * u.cos(), radius * r * u.sin()]);
        if dim >= 3 {
            p[2] = radius * z;
        }
        p
    })
}

/// Closed curve on `base × S¹` turning `p` times around the base and `q`
/// times around the fiber. On a circle base the base angle is perturbed
/// by `amp sin(mode u)`; on other bases the curve follows the chart circle
/// of radius `radius` with that relative radial perturbation.
pub fn torus_winding(n: usize, product: &MetricModel, p: i64, q: i64, radius: f64, amp: f64, mode: u32) -> Result<DiscreteCurve, GeneratorError> {
    let base = product
        .base()
        .filter(|_| product.fiber_index().is_some())
        .ok_or_else(|| GeneratorError::Unsupported(format!("torus-winding needs a product model, got {}", product.family_name())))?;
    let (pf, qf, m) = (p as f64, q as f64, mode as f64);
    let dim = product.dim;
    let fi = base.dim;
    let curve = match base.family {
        Family::Circle { .. } => {
            let mut shift = Vector::zeros();
            shift[0] = TAU * pf;
            shift[fi] = TAU * qf;
            DiscreteCurve::from_fn(n, dim, shift, |u| point(&[pf * u + amp * (m * u).sin(), qf * u]))?
        }
        _ => {
            let mut shift = Vector::zeros();
            shift[fi] = TAU * qf;
            DiscreteCurve::from_fn(n, dim, shift, |u| {
                let r = radius * (1.0 + amp * (m * u).sin());
                let mut x = point(&[r * (pf * u).cos(), r * (pf * u).sin()]);
                x[fi] = qf * u;
                x
            })?
        }
    };
    Ok(curve)
}

/// `u ↦ (a cos pu, a sin pu, b cos qu, b sin qu)` on the unit S³ ⊂ R⁴,
/// `b = √(1 − a²)`, in the stereographic chart. Constant `k` and `τ`.
pub fn clifford(n: usize, a: f64, p: i64, q: i64) -> Result<DiscreteCurve, GeneratorError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(GeneratorError::Unsupported(format!("clifford radius a = {a} must lie in (0, 1)")));
    }
    let b = (1.0 - a * a).sqrt();
    let (pf, qf) = (p as f64, q as f64);
    Ok(DiscreteCurve::from_fn(n, 3, Vector::zeros(), |u| {
        sphere_to_stereo([a * (pf * u).cos(), a * (pf * u).sin(), b * (qf * u).cos(), b * (qf * u).sin()])
    })?)
}

/// Reads chart coordinates, one node per line, separated by commas or
/// whitespace. Blank lines and lines starting with `#` are skipped.
pub fn points_file(path: &Path, dim: usize, shift: Vector) -> Result<DiscreteCurve, GeneratorError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| GeneratorError::Io { path: name.clone(), source })?;
    let mut nodes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::parse).collect();
        let vals = vals.map_err(|e| GeneratorError::Parse { path: name.clone(), line: lineno + 1, msg: e.to_string() })?;
        if vals.len() != dim {
            return Err(GeneratorError::Parse { path: name.clone(), line: lineno + 1, msg: format!("expected {dim} coordinates, found {}", vals.len()) });
        }
        nodes.push(point(&vals));
    }
    Ok(DiscreteCurve::with_shift(nodes, dim, shift)?)
}
