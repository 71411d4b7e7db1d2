//! Flow under a time-dependent metric `g_t = exp(f) g₀` (conformal) or
//! `g + exp(f) ρ² dσ²` (warped circle), with the spatially constant `f`
//! driven so that `M_t = max k²` does not increase.

use crate::curve::{CurveGeometry, K_FLOOR};
use crate::flow::{Diagnostics, FlowObserver, FlowStop, FlowState, StopReason};
use crate::manifold::{Family, MetricModel};
use serde::Serialize;
use thiserror::Error;

/// Below this `|2|π_*T|² − |π_*N|²|` the warped rate is undefined.
pub const DENOMINATOR_MIN: f64 = 1e-6;
/// `|f|` beyond this counts as a singular metric.
pub const F_GUARD: f64 = 50.0;
/// Relative growth of `M_t` tolerated per step.
pub const MT_SLACK: f64 = 1e-4;
/// Nodes with `k² ≥ M_t (1 − ARGMAX_TIE)` form the argmax set.
pub const ARGMAX_TIE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolvingError {
    #[error("degenerate denominator 2|pi_*T|^2 - |pi_*N|^2 = {value:e} at node {node}")]
    DegenerateDenominator { node: usize, value: f64 },
    #[error("model {0} has no warped fiber")]
    NotWarped(String),
    #[error("curvature evaluation failed: {0}")]
    Curvature(String),
}

/// Node of strictly maximal `k²`, lowest index on exact ties.
pub fn argmax_node(geom: &CurveGeometry) -> usize {
    geom.curvature
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, k)| if *k > acc.1 { (i, *k) } else { acc })
        .0
}

/// All nodes with `k²` within the tie tolerance of `M_t`.
pub fn argmax_set(geom: &CurveGeometry) -> Vec<usize> {
    let m = geom.max_k2();
    (0..geom.len()).filter(|&i| geom.curvature[i].powi(2) >= m * (1.0 - ARGMAX_TIE)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEval {
    pub node: usize,
    pub k2: f64,
    /// `R(T,N,T,N)`, zero where `N` is undefined.
    pub curvature_term: f64,
    pub denominator: Option<f64>,
    pub rate: f64,
}

fn numerator(geom: &CurveGeometry, model: &MetricModel) -> Result<(usize, f64, f64, Option<crate::manifold::Vector>), EvolvingError> {
    let i = argmax_node(geom);
    let k = geom.curvature[i];
    if k <= K_FLOOR {
        return Ok((i, k * k, 0.0, None));
    }
    let t = geom.tangent[i];
    let n = geom.derivs[0][i] / k;
    let r = model
        .riemann4(&geom.points[i], &t, &n, &t, &n, geom.t)
        .map_err(|e| EvolvingError::Curvature(e.to_string()))?;
    Ok((i, k * k, r, Some(n)))
}

/// `∂f/∂t = 2k² + 2R(T,N,T,N)` at the argmax node.
pub fn f_rate_conformal(geom: &CurveGeometry, model: &MetricModel) -> Result<RateEval, EvolvingError> {
    let (node, k2, r, _) = numerator(geom, model)?;
    Ok(RateEval { node, k2, curvature_term: r, denominator: None, rate: 2.0 * k2 + 2.0 * r })
}

/// `∂f/∂t = (2k² + 2R(T,N,T,N)) / (2|π_*T|² − |π_*N|²)` at the argmax node,
/// fiber norms in the current warped metric.
pub fn f_rate_warped(geom: &CurveGeometry, model: &MetricModel) -> Result<RateEval, EvolvingError> {
    let fi = match &model.family {
        Family::WarpedCircle { .. } => model.fiber_index().expect("warped models have a fiber"),
        _ => return Err(EvolvingError::NotWarped(model.family_name())),
    };
    let (node, k2, r, normal) = numerator(geom, model)?;
    let gff = geom.metric[node][(fi, fi)];
    let pt = gff * geom.tangent[node][fi].powi(2);
    let pn = normal.map(|n| gff * n[fi].powi(2)).unwrap_or(0.0);
    let den = 2.0 * pt - pn;
    if !(den.abs() >= DENOMINATOR_MIN) {
        return Err(EvolvingError::DegenerateDenominator { node, value: den });
    }
    Ok(RateEval { node, k2, curvature_term: r, denominator: Some(den), rate: (2.0 * k2 + 2.0 * r) / den })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolvingMode {
    Conformal,
    Warped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolvingRow {
    pub step: u64,
    pub t: f64,
    pub f: f64,
    pub df_dt: Option<f64>,
    pub m_t: f64,
    pub denominator: Option<f64>,
}

/// Drives `f` by the theorem's rate (when `drive` is set) and records
/// `f`, its rate and `M_t`; stops on a non-increasing-`M_t` violation
/// (when `enforce_mt`), a degenerate denominator, or `|f| > 50`.
pub struct EvolvingObserver {
    pub mode: EvolvingMode,
    pub drive: bool,
    pub enforce_mt: bool,
    pub rows: Vec<EvolvingRow>,
    pending: Option<RateEval>,
}

impl EvolvingObserver {
    pub fn new(mode: EvolvingMode, drive: bool) -> Self {
        EvolvingObserver { mode, drive, enforce_mt: drive, rows: Vec::new(), pending: None }
    }

    fn rate(&self, geom: &CurveGeometry, model: &MetricModel) -> Result<RateEval, FlowStop> {
        let r = match self.mode {
            EvolvingMode::Conformal => f_rate_conformal(geom, model),
            EvolvingMode::Warped => f_rate_warped(geom, model),
        };
        r.map_err(|e| FlowStop::violation(e.to_string()))
    }
}

impl FlowObserver for EvolvingObserver {
    fn start(&mut self, state: &FlowState, _model: &MetricModel, diag: &mut Diagnostics) -> Result<(), FlowStop> {
        diag.f = Some(state.f_value);
        self.rows.push(EvolvingRow { step: 0, t: state.t, f: state.f_value, df_dt: None, m_t: diag.m_t, denominator: None });
        Ok(())
    }

    fn before_step(&mut self, state: &FlowState, model: &mut MetricModel, dt: f64) -> Result<(), FlowStop> {
        if !self.drive {
            self.pending = None;
            return Ok(());
        }
        let eval = self.rate(&state.geometry, model)?;
        // A sign flip means the denominator crossed zero between steps.
        let prev = self.rows.last().and_then(|r| r.denominator);
        if let (Some(p), Some(d)) = (prev, eval.denominator) {
            if p * d < 0.0 {
                let e = EvolvingError::DegenerateDenominator { node: eval.node, value: d };
                return Err(FlowStop::violation(format!("{e} (crossed zero from {p:e})")));
            }
        }
        let f = state.f_value + dt * eval.rate;
        if !(f.abs() <= F_GUARD) {
            return Err(FlowStop::new(StopReason::MetricSingular, format!("|f| = {:e} exceeds {F_GUARD}", f.abs())));
        }
        model.set_driven_f(f);
        self.pending = Some(eval);
        Ok(())
    }

    fn after_step(
        &mut self,
        prev: &FlowState,
        next: &FlowState,
        _model: &MetricModel,
        dt: f64,
        _resampled: bool,
        diag: &mut Diagnostics,
    ) -> Result<(), FlowStop> {
        let eval = self.pending.take();
        let df_dt = eval.map(|e| e.rate).unwrap_or((next.f_value - prev.f_value) / dt);
        let denominator = eval.and_then(|e| e.denominator);
        diag.f = Some(next.f_value);
        diag.df_dt = Some(df_dt);
        diag.denominator = denominator;
        let prev_m = self.rows.last().map(|r| r.m_t).unwrap_or(diag.m_t);
        self.rows.push(EvolvingRow { step: next.step, t: next.t, f: next.f_value, df_dt: Some(df_dt), m_t: diag.m_t, denominator });
        if self.enforce_mt && mt_grew(prev_m, diag.m_t) {
            return Err(FlowStop::violation(format!("M_t increased from {prev_m:.17e} to {:.17e} at step {}", diag.m_t, next.step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtReport {
    pub passed: bool,
    pub worst_growth: f64,
    pub first_violation: Option<u64>,
}

/// Curvatures below `K_FLOOR` count as zero, so growth under `K_FLOOR²` is
/// roundoff on a geodesic rather than a violation.
fn mt_grew(prev: f64, next: f64) -> bool {
    next > prev * (1.0 + MT_SLACK) + K_FLOOR * K_FLOOR
}

/// Offline check `M_{t+dt} ≤ M_t (1 + 1e−4)` over a trace.
pub fn monitor_mt(trace: &[Diagnostics]) -> MtReport {
    let mut report = MtReport { passed: true, worst_growth: 0.0, first_violation: None };
    for w in trace.windows(2) {
        if w[0].m_t > 0.0 {
            report.worst_growth = report.worst_growth.max(w[1].m_t / w[0].m_t - 1.0);
        }
        if mt_grew(w[0].m_t, w[1].m_t) && report.first_violation.is_none() {
            report.passed = false;
            report.first_violation = Some(w[1].step);
        }
    }
    report
}
