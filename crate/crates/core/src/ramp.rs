//! Ramps on products `M × S¹`: closed curves whose tangent has a strictly
//! positive fiber component. Ramps stay ramps under the flow, their minimal
//! fiber height `μ_t` is non-decreasing, and they converge to closed
//! geodesics.

use crate::curve::{ramp_height, CurveError, CurveGeometry, DiscreteCurve, RampContext, K_FLOOR};
use crate::flow::{self, Diagnostics, FlowObserver, FlowParams, FlowRun, FlowState, FlowStop, StopReason, StopReport};
use crate::manifold::{CoordKind, MetricModel};
use crate::par::Exec;
use serde::Serialize;
use std::f64::consts::TAU;
use thiserror::Error;

/// Allowed decrease of `μ` per unit time.
pub const MU_SLACK: f64 = 1e-6;
pub const PROP18_SLACK: f64 = 1.05;
pub const WINDING_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RampError {
    #[error("initial curve is not a ramp: fiber height {height:e} at node {node}")]
    NotRamp { node: usize, height: f64 },
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Flow(#[from] flow::FlowError),
    #[error("winding {0} is not an integer within tolerance")]
    Winding(f64),
    #[error("flow stopped with {} before reaching a geodesic: {}", .0.reason.name(), .0.detail)]
    NotConverged(Box<StopReport>),
}

/// Checks that a curve is a ramp and returns its heights.
pub fn check_ramp(curve: &DiscreteCurve, geom: &CurveGeometry, model: &MetricModel) -> Result<RampContext, RampError> {
    let ctx = ramp_height(curve, geom, model)?;
    if !ctx.is_ramp {
        return Err(RampError::NotRamp { node: ctx.argmin, height: ctx.mu });
    }
    Ok(ctx)
}

/// Max relative residual of `∂h/∂t = h'' + k²h` between consecutive states,
/// with `h''` from the same centred arclength differences the flow uses.
pub fn check_ramp_evolution(prev: &FlowState, next: &FlowState, model: &MetricModel, dt: f64) -> Result<f64, CurveError> {
    let hp = ramp_height(&prev.curve, &prev.geometry, model)?.heights;
    let hn = ramp_height(&next.curve, &next.geometry, model)?.heights;
    let g = &prev.geometry;
    let hss = g.scalar_ds(&g.scalar_ds(&hp));
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..hp.len() {
        let rhs = hss[i] + g.curvature[i].powi(2) * hp[i];
        worst = worst.max(((hn[i] - hp[i]) / dt - rhs).abs());
        scale = scale.max(rhs.abs());
    }
    // The floor keeps geodesics, where both sides vanish, from dividing noise by noise.
    Ok(worst / scale.max(1e-3))
}

/// `Φ = min k/h`, `Ψ = max k/h`, with `k` signed when the model is a surface.
pub fn phi_psi(geom: &CurveGeometry, heights: &[f64]) -> (f64, f64) {
    let signed = geom.signed_curvature();
    let k = signed.as_deref().unwrap_or(&geom.curvature);
    k.iter().zip(heights).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (k, h)| {
        let r = k / h;
        (lo.min(r), hi.max(r))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RampRow {
    pub step: u64,
    pub t: f64,
    pub mu: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub phi: f64,
    pub psi: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RampTrace {
    pub rows: Vec<RampRow>,
    /// `C₁ = Φ₀` and `C₂ = Ψ₀`.
    pub c1: f64,
    pub c2: f64,
    pub xi: f64,
    pub winding: i64,
}

/// Flow observer recording the ramp trace and enforcing the `μ` monitor.
pub struct RampObserver {
    pub trace: RampTrace,
    /// Skip the `μ` check on steps that straddle a resample.
    pub skip_resampled: bool,
    pub enforce: bool,
}

impl RampObserver {
    pub fn new(xi: f64) -> Self {
        RampObserver { trace: RampTrace { xi, ..Default::default() }, skip_resampled: false, enforce: true }
    }

    fn row(state: &FlowState, model: &MetricModel, diag: &Diagnostics) -> Result<RampRow, FlowStop> {
        let ctx = ramp_height(&state.curve, &state.geometry, model).map_err(|e| FlowStop::violation(e.to_string()))?;
        let (phi, psi) = phi_psi(&state.geometry, &ctx.heights);
        Ok(RampRow { step: state.step, t: state.t, mu: ctx.mu, kappa: diag.kappa, lambda: diag.lambda, phi, psi, resampled: diag.resampled })
    }
}

impl FlowObserver for RampObserver {
    fn start(&mut self, state: &FlowState, model: &MetricModel, diag: &mut Diagnostics) -> Result<(), FlowStop> {
        let row = Self::row(state, model, diag)?;
        diag.mu = Some(row.mu);
        self.trace.c1 = row.phi;
        self.trace.c2 = row.psi;
        self.trace.rows.push(row);
        if self.enforce && row.mu <= 0.0 {
            return Err(FlowStop::violation(format!("initial curve is not a ramp (mu = {:e})", row.mu)));
        }
        Ok(())
    }

    fn after_step(
        &mut self,
        _prev: &FlowState,
        next: &FlowState,
        model: &MetricModel,
        dt: f64,
        resampled: bool,
        diag: &mut Diagnostics,
    ) -> Result<(), FlowStop> {
        let row = Self::row(next, model, diag)?;
        diag.mu = Some(row.mu);
        let prev_mu = self.trace.rows.last().map(|r| r.mu).unwrap_or(row.mu);
        self.trace.rows.push(row);
        if !self.enforce {
            return Ok(());
        }
        if row.mu <= 0.0 {
            return Err(FlowStop::violation(format!("curve stopped being a ramp at step {} (mu = {:e})", row.step, row.mu)));
        }
        if !(resampled && self.skip_resampled) && row.mu < prev_mu - MU_SLACK * dt {
            return Err(FlowStop::violation(format!("mu decreased from {:.17e} to {:.17e} at step {}", prev_mu, row.mu, row.step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuReport {
    pub passed: bool,
    pub worst_drop: f64,
    pub violation: Option<String>,
}

/// Offline check `μ_{t+dt} ≥ μ_t − 1e−6·dt` over a ramp trace.
pub fn monitor_mu(trace: &RampTrace, skip_resampled: bool) -> Result<MuReport, RampError> {
    let first = trace.rows.first().ok_or(RampError::NotRamp { node: 0, height: f64::NAN })?;
    if first.mu <= 0.0 {
        return Err(RampError::NotRamp { node: 0, height: first.mu });
    }
    let mut report = MuReport { passed: true, worst_drop: 0.0, violation: None };
    for w in trace.rows.windows(2) {
        let dt = w[1].t - w[0].t;
        let drop = w[0].mu - w[1].mu;
        if skip_resampled && w[1].resampled {
            continue;
        }
        report.worst_drop = report.worst_drop.max(drop / dt.max(f64::MIN_POSITIVE));
        if drop > MU_SLACK * dt && report.violation.is_none() {
            report.passed = false;
            report.violation = Some(format!("mu dropped by {drop:e} at step {}", w[1].step));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchOutcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop18Report {
    /// `Φ_t ≥ Φ₀ e^{Ξt}` while `Φ < 0`.
    pub lower: BranchOutcome,
    /// `Ψ_t ≤ Ψ₀ e^{Ξt}` while `Ψ > 0`.
    pub upper: BranchOutcome,
    pub worst_lower_ratio: f64,
    pub worst_upper_ratio: f64,
}

/// Exponential bounds on `Φ = min k/h` and `Ψ = max k/h`, slack factor 1.05.
/// A branch whose sign condition fails at any recorded step is reported as
/// not applicable.
pub fn prop18_bounds(trace: &RampTrace, xi: f64) -> Prop18Report {
    let rows = &trace.rows;
    let (phi0, psi0) = (rows[0].phi, rows[0].psi);
    let lower_applies = rows.iter().all(|r| r.phi < -K_FLOOR);
    let upper_applies = rows.iter().all(|r| r.psi > K_FLOOR);
    let t0 = rows[0].t;
    let mut worst_lower: f64 = 0.0;
    let mut worst_upper: f64 = 0.0;
    for r in rows {
        let growth = (xi * (r.t - t0)).exp();
        if lower_applies {
            worst_lower = worst_lower.max(r.phi / (phi0 * growth));
        }
        if upper_applies {
            worst_upper = worst_upper.max(r.psi / (psi0 * growth));
        }
    }
    let outcome = |applies: bool, worst: f64| match (applies, worst <= PROP18_SLACK) {
        (false, _) => BranchOutcome::NotApplicable,
        (true, true) => BranchOutcome::Pass,
        (true, false) => BranchOutcome::Fail,
    };
    Prop18Report {
        lower: outcome(lower_applies, worst_lower),
        upper: outcome(upper_applies, worst_upper),
        worst_lower_ratio: worst_lower,
        worst_upper_ratio: worst_upper,
    }
}

/// Number of turns of the curve around an angular chart coordinate,
/// from the unwrapped total increment.
pub fn winding_number(curve: &DiscreteCurve, coord: usize) -> Result<i64, RampError> {
    let n = curve.len() as isize;
    let total: f64 = (0..n)
        .map(|i| {
            let d = curve.node(i + 1)[coord] - curve.node(i)[coord];
            // Unwrap into (−π, π].
            d - TAU * ((d + TAU / 2.0) / TAU).floor()
        })
        .sum();
    let turns = total / TAU;
    let rounded = turns.round();
    if (turns - rounded).abs() > WINDING_TOL {
        return Err(RampError::Winding(turns));
    }
    Ok(rounded as i64)
}

/// Windings around every angular coordinate of the model, in index order.
pub fn windings(curve: &DiscreteCurve, model: &MetricModel) -> Result<Vec<(usize, i64)>, RampError> {
    (0..model.dim)
        .filter(|&i| model.coord_kind(i) == CoordKind::Angular)
        .map(|i| Ok((i, winding_number(curve, i)?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct GeodesicResult {
    pub run: FlowRun,
    pub trace: RampTrace,
    pub initial_windings: Vec<(usize, i64)>,
    pub final_windings: Vec<(usize, i64)>,
    pub sup_d1: f64,
    pub sup_d2: Option<f64>,
}

impl GeodesicResult {
    pub fn converged(&self) -> bool {
        self.run.report.reason == StopReason::GeodesicConverged
    }
}

/// Flows a ramp and records the ramp trace. The run result is returned
/// whatever the stop reason.
pub fn run_ramp(exec: Exec, initial: DiscreteCurve, model: MetricModel, params: &FlowParams, skip_resampled: bool) -> Result<GeodesicResult, RampError> {
    let initial_windings = windings(&initial, &model)?;
    let geom = crate::curve::geometry(&initial, &model, 0.0, 1)?;
    check_ramp(&initial, &geom, &model)?;
    let fiber = model.fiber_index().expect("ramp models have a fiber");
    let mut obs = RampObserver::new(model.xi_bound);
    obs.skip_resampled = skip_resampled;
    obs.trace.winding = winding_number(&initial, fiber)?;
    let run = flow::run(exec, initial, model, params, &mut obs)?;
    let final_windings = windings(&run.final_state.curve, &run.model)?;
    let last = run.trace.last().expect("initial row");
    let (sup_d1, sup_d2) = (last.geo_residual(), last.sup_d2());
    Ok(GeodesicResult { run, trace: obs.trace, initial_windings, final_windings, sup_d1, sup_d2 })
}

/// Flows a ramp to a closed geodesic; any other stop is an error.
pub fn find_geodesic(exec: Exec, initial: DiscreteCurve, model: MetricModel, params: &FlowParams) -> Result<GeodesicResult, RampError> {
    let result = run_ramp(exec, initial, model, params, false)?;
    if !result.converged() {
        return Err(RampError::NotConverged(Box::new(result.run.report)));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::geometry;
    use crate::manifold::Vector;

    fn torus() -> MetricModel {
        MetricModel::product(MetricModel::circle(1.0).unwrap(), 1.0).unwrap()
    }

    fn winding(p: f64, q: f64, amp: f64, mode: f64, n: usize) -> DiscreteCurve {
        DiscreteCurve::from_fn(n, 2, Vector::new(TAU * p, TAU * q, 0.0, 0.0), |u| Vector::new(p * u + amp * (mode * u).sin(), q * u, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn winding_numbers() {
        let c = winding(1.0, 2.0, 0.2, 3.0, 64);
        assert_eq!(windings(&c, &torus()).unwrap(), vec![(0, 1), (1, 2)]);
        let back = winding(-3.0, 1.0, 0.0, 1.0, 64);
        assert_eq!(winding_number(&back, 0).unwrap(), -3);
    }

    #[test]
    fn non_ramp_is_rejected() {
        let m = torus();
        let c = DiscreteCurve::from_fn(64, 2, Vector::zeros(), |u| Vector::new(u.cos(), u.sin(), 0.0, 0.0)).unwrap();
        let g = geometry(&c, &m, 0.0, 1).unwrap();
        assert!(matches!(check_ramp(&c, &g, &m), Err(RampError::NotRamp { .. })));
        assert!(matches!(find_geodesic(Exec::default(), c, m, &FlowParams::default()), Err(RampError::NotRamp { .. })));
    }

    #[test]
    fn geodesic_evolution_residual_vanishes() {
        let m = torus();
        for c in [winding(1.0, 2.0, 0.0, 1.0, 128), winding(0.0, 1.0, 0.0, 1.0, 128).map_nodes(|p| p + Vector::new(0.4, 0.0, 0.0, 0.0))] {
            let s = FlowState::new(c, &m, 0.0, 2).unwrap();
            let dt = 1e-4;
            let (n, _) = flow::step(Exec::Sequential, &s, &m, dt, &FlowParams::default()).unwrap();
            assert!(check_ramp_evolution(&s, &n, &m, dt).unwrap() < 1e-8);
        }
    }

    #[test]
    fn prop18_not_applicable_on_geodesic() {
        let rows = vec![RampRow { step: 0, t: 0.0, mu: 0.5, kappa: 0.0, lambda: 0.0, phi: 0.0, psi: 0.0, resampled: false }];
        let r = prop18_bounds(&RampTrace { rows, ..Default::default() }, 1e-9);
        assert_eq!(r.upper, BranchOutcome::NotApplicable);
        assert_eq!(r.lower, BranchOutcome::NotApplicable);
    }
}
