//! Reduced dynamics of curves with spatially constant curvature `k` and
//! torsion `τ` in a space form of curvature `K`:
//!
//! ```text
//! dk/dt = k³ − τ²k + Kk,    dτ/dt = 2τk²
//! ```
//!
//! or, with `u = k²`, `v = τ²`: `du/dt = 2u² + 2Ku − 2uv`, `dv/dt = 4uv`.
//! Along trajectories `du/dv = (u + K − v)/2v`, whose solutions are
//! `u = −K − v + C√v`.

use serde::Serialize;
use thiserror::Error;

/// Blow-up threshold on `k`.
pub const K_OVERFLOW: f64 = 1e8;
/// Relative change of `k` per RK4 step above which the step is halved.
pub const HALVING_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("v must be positive, got {0}")]
    NonPositiveV(f64),
    #[error("tau {tau} lies outside the bracket ({lo}, {hi})")]
    OutsideBracket { tau: f64, lo: f64, hi: f64 },
    #[error("invalid integration parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HelixState {
    pub k: f64,
    pub tau: f64,
    #[serde(rename = "K")]
    pub big_k: f64,
    pub t: f64,
}

impl HelixState {
    pub fn new(k: f64, tau: f64, big_k: f64) -> Self {
        HelixState { k, tau, big_k, t: 0.0 }
    }

    pub fn u(&self) -> f64 {
        self.k * self.k
    }

    pub fn v(&self) -> f64 {
        self.tau * self.tau
    }
}

/// `(dk/dt, dτ/dt)`.
pub fn rhs(s: &HelixState) -> (f64, f64) {
    rhs_kt(s.k, s.tau, s.big_k)
}

fn rhs_kt(k: f64, tau: f64, big_k: f64) -> (f64, f64) {
    (k * k * k - tau * tau * k + big_k * k, 2.0 * tau * k * k)
}

/// Classical RK4 step for an autonomous planar system.
fn rk4<F: Fn(f64, f64) -> (f64, f64)>(f: &F, x: f64, y: f64, h: f64) -> (f64, f64) {
    let (a1, b1) = f(x, y);
    let (a2, b2) = f(x + 0.5 * h * a1, y + 0.5 * h * b1);
    let (a3, b3) = f(x + 0.5 * h * a2, y + 0.5 * h * b2);
    let (a4, b4) = f(x + h * a3, y + h * b3);
    (x + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4), y + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Blowup {
    pub t: f64,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// States at `t = 0, dt, 2dt, …` (the last sample may be shorter).
    pub samples: Vec<HelixState>,
    pub blowup: Option<Blowup>,
    /// Whether `v` never decreased between samples.
    pub v_monotone: bool,
    pub halvings: usize,
}

impl Trajectory {
    pub fn last(&self) -> &HelixState {
        self.samples.last().expect("trajectory has the initial sample")
    }
}

/// RK4 in `(k, τ)` with fixed `dt`, halving any step whose `|Δk|` exceeds
/// `0.01·max(k, 1)`.
pub fn integrate(state: HelixState, t_end: f64, dt: f64) -> Result<Trajectory, OdeError> {
    if !(dt > 0.0 && dt.is_finite()) || !t_end.is_finite() || t_end < state.t {
        return Err(OdeError::Params(format!("dt = {dt}, t_end = {t_end}")));
    }
    let f = |k: f64, tau: f64| rhs_kt(k, tau, state.big_k);
    let mut samples = vec![state];
    let mut cur = state;
    let mut halvings = 0;
    let mut v_monotone = true;
    while cur.t < t_end {
        let target = (cur.t + dt).min(t_end);
        let mut h = target - cur.t;
        while cur.t < target {
            h = h.min(target - cur.t);
            let (k, tau) = rk4(&f, cur.k, cur.tau, h);
            let accept = k.is_finite() && tau.is_finite() && (k - cur.k).abs() <= HALVING_FRACTION * cur.k.abs().max(1.0);
            if !accept {
                // Steps this small no longer advance t: k is running away.
                if h < 1e-15 * cur.t.max(1.0) {
                    samples.push(cur);
                    return Ok(Trajectory { samples, blowup: Some(Blowup { t: cur.t, k: cur.k }), v_monotone, halvings });
                }
                h *= 0.5;
                halvings += 1;
                continue;
            }
            let next_t = if target - (cur.t + h) <= 1e-15 * target.abs().max(1.0) { target } else { cur.t + h };
            if tau * tau < cur.v() {
                v_monotone = false;
            }
            cur = HelixState { k, tau, big_k: cur.big_k, t: next_t };
            if k.abs() > K_OVERFLOW {
                samples.push(cur);
                return Ok(Trajectory { samples, blowup: Some(Blowup { t: cur.t, k: cur.k }), v_monotone, halvings });
            }
        }
        samples.push(cur);
    }
    Ok(Trajectory { samples, blowup: None, v_monotone, halvings })
}

/// RK4 of the `(u, v)` system with fixed step; samples every `dt`.
pub fn integrate_uv(u0: f64, v0: f64, big_k: f64, t_end: f64, dt: f64) -> Vec<(f64, f64, f64)> {
    let f = |u: f64, v: f64| (2.0 * u * u + 2.0 * big_k * u - 2.0 * u * v, 4.0 * u * v);
    let steps = (t_end / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let (mut u, mut v) = (u0, v0);
    out.push((0.0, u, v));
    for i in 1..=steps {
        (u, v) = rk4(&f, u, v, dt);
        out.push((i as f64 * dt, u, v));
    }
    out
}

/// Integral constant `C` of `u = −K − v + C√v` through `(u₀, v₀)`.
pub fn invariant_constant(u0: f64, v0: f64, big_k: f64) -> Result<f64, OdeError> {
    if !(v0 > 0.0) {
        return Err(OdeError::NonPositiveV(v0));
    }
    Ok((u0 + big_k + v0) / v0.sqrt())
}

/// `u` on the invariant curve through `(u₀, v₀)` at a given `v`.
pub fn invariant_u(v: f64, u0: f64, v0: f64, big_k: f64) -> Result<f64, OdeError> {
    if !(v > 0.0) {
        return Err(OdeError::NonPositiveV(v));
    }
    Ok(-big_k - v + invariant_constant(u0, v0, big_k)? * v.sqrt())
}

/// The hyperbolic case normalised by `u(v₀) = 1`: `u = 1 + √(v v₀) − v`.
pub fn invariant_u_of_v(v: f64, v0: f64) -> Result<f64, OdeError> {
    if !(v > 0.0) {
        return Err(OdeError::NonPositiveV(v));
    }
    if !(v0 > 0.0) {
        return Err(OdeError::NonPositiveV(v0));
    }
    Ok(1.0 + (v * v0).sqrt() - v)
}

/// Limit of `√v` as `u → 0⁺`: the larger root of `C√v = v + K`, i.e.
/// `(C + √(C² − 4K))/2`. `None` when there is no real root.
pub fn limit_sqrt_v(u0: f64, v0: f64, big_k: f64) -> Option<f64> {
    let c = invariant_constant(u0, v0, big_k).ok()?;
    let disc = c * c - 4.0 * big_k;
    (disc >= 0.0).then(|| 0.5 * (c + disc.sqrt()))
}

/// Exponents `(a, b, c)` of the implicit solution of
/// `dτ̃/dt = 2τ̃(1 + τ̃₀τ̃ − τ̃²)`.
pub fn diamond_exponents(tau0: f64) -> (f64, f64, f64) {
    let s = (tau0 * tau0 + 4.0).sqrt();
    (-1.0, 0.5 - tau0 / (2.0 * s), 0.5 + tau0 / (2.0 * s))
}

/// Roots `(r₋, r₊) = (τ̃₀ ∓ √(τ̃₀² + 4))/2` bracketing the trajectory.
pub fn diamond_bracket(tau0: f64) -> (f64, f64) {
    let s = (tau0 * tau0 + 4.0).sqrt();
    (0.5 * (tau0 - s), 0.5 * (tau0 + s))
}

fn diamond_lhs(tau: f64, gap: f64, tau0: f64) -> f64 {
    let (a, b, c) = diamond_exponents(tau0);
    let (lo, _) = diamond_bracket(tau0);
    tau.powf(a) * gap.powf(b) * (tau - lo).powf(c)
}

/// Left minus right side of
/// `τ̃^a (r₊ − τ̃)^b (τ̃ − r₋)^c = τ̃₀^a (r₊ − τ̃₀)^b (τ̃₀ − r₋)^c · e^{−2t}`.
///
/// Near the limit `r₊ − τ̃` drops below the absolute error of `τ̃` and
/// this form loses all precision; see [`diamond_residual_gap`].
pub fn diamond_residual(tau: f64, t: f64, tau0: f64) -> Result<f64, OdeError> {
    let (_, hi) = diamond_bracket(tau0);
    diamond_residual_gap(tau, hi - tau, t, tau0)
}

/// As [`diamond_residual`], with the gap `r₊ − τ̃` supplied by the caller
/// (integrated directly, or recovered from `u = (r₊ − τ̃)(τ̃ − r₋)`).
pub fn diamond_residual_gap(tau: f64, gap: f64, t: f64, tau0: f64) -> Result<f64, OdeError> {
    let (lo, hi) = diamond_bracket(tau0);
    for (x, g) in [(tau, gap), (tau0, hi - tau0)] {
        if !(x > 0.0 && x > lo && g > 0.0) {
            return Err(OdeError::OutsideBracket { tau: x, lo: lo.max(0.0), hi });
        }
    }
    Ok(diamond_lhs(tau, gap, tau0) - diamond_lhs(tau0, hi - tau0, tau0) * (-2.0 * t).exp())
}

/// RK4 of `dτ̃/dt = 2τ̃(1 + τ̃₀τ̃ − τ̃²)`, carried in the gap `w = r₊ − τ̃`
/// (`dw/dt = −2τ̃ w (τ̃ − r₋)`) so that `w` keeps full relative precision.
/// Returns `(t, τ̃, w)` every `dt`.
pub fn integrate_tau_tilde(tau0: f64, t_end: f64, dt: f64) -> Vec<(f64, f64, f64)> {
    let (lo, hi) = diamond_bracket(tau0);
    let f = |w: f64| {
        let tau = hi - w;
        -2.0 * tau * w * (tau - lo)
    };
    let steps = (t_end / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut w = hi - tau0;
    out.push((0.0, tau0, w));
    for i in 1..=steps {
        let k1 = f(w);
        let k2 = f(w + 0.5 * dt * k1);
        let k3 = f(w + 0.5 * dt * k2);
        let k4 = f(w + dt * k3);
        w += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push((i as f64 * dt, hi - w, w));
    }
    out
}

/// One row of the `helix` trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HelixRow {
    pub t: f64,
    pub k: f64,
    pub tau: f64,
    pub u: f64,
    pub v: f64,
    pub invariant_residual: Option<f64>,
    pub diamond_residual: Option<f64>,
}

/// Trace rows with invariant checks where they apply: the invariant curve
/// whenever `v₀ > 0`, and the implicit solution when `K = −1`, `k₀ = 1`,
/// `τ₀ > 0` (where `τ` itself solves the scalar equation).
pub fn helix_rows(traj: &Trajectory) -> Vec<HelixRow> {
    let s0 = traj.samples[0];
    let (u0, v0) = (s0.u(), s0.v());
    let diamond = s0.big_k == -1.0 && s0.k == 1.0 && s0.tau > 0.0;
    traj.samples
        .iter()
        .map(|s| HelixRow {
            t: s.t,
            k: s.k,
            tau: s.tau,
            u: s.u(),
            v: s.v(),
            invariant_residual: invariant_u(s.v(), u0, v0, s.big_k).ok().map(|u| s.u() - u),
            // u = (r₊ − τ̃)(τ̃ − r₋) under u(v₀) = 1 gives the gap without cancellation.
            diamond_residual: if diamond {
                let (lo, _) = diamond_bracket(s0.tau);
                diamond_residual_gap(s.tau, s.u() / (s.tau - lo), s.t, s0.tau).ok()
            } else {
                None
            },
        })
        .collect()
}
