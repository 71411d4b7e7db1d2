//! Explicit integration of `∂γ/∂t = DT/∂s` with per-step diagnostics,
//! identity monitors and stop criteria.

use crate::curve::{self, frenet, geometry_with, ramp_height, CurveError, CurveGeometry, DiscreteCurve};
use crate::manifold::{contract, sphere_to_stereo, stereo_to_sphere, Family, MetricModel, Vector};
use crate::par::Exec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LAMBDA_FLOOR: f64 = 1e-6;
pub const BERNSTEIN_SLACK: f64 = 0.05;
/// Absolute allowance so that geodesic starts (`M₀ ≈ 0`) pass trivially.
pub const BERNSTEIN_FLOOR: f64 = 1e-10;
pub const LENGTH_TOL: f64 = 1e-12;
pub const CERTIFICATE_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub c_cfl: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_max: f64,
    pub tol_geo: f64,
    /// Consecutive steps below `tol_geo` required for convergence.
    pub geo_window: usize,
    pub k2_max: f64,
    /// Length floor as a fraction of the initial length.
    pub length_floor: f64,
    /// 0 disables resampling.
    pub resample_every: usize,
    /// 0 disables snapshots. Set from `output.snapshot_every`.
    #[serde(skip)]
    pub snapshot_every: usize,
    pub n_max: usize,
    /// Chart radius beyond which an S³ node counts as too close to the pole.
    pub pole_radius: f64,
    pub monitor_length: bool,
    pub monitor_bernstein: bool,
    /// Stop when an identity residual exceeds this; `None` only records them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_tol: Option<f64>,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            c_cfl: 0.25,
            dt_min: 1e-12,
            dt_max: 1e-2,
            t_max: 1.0,
            tol_geo: 1e-4,
            geo_window: 50,
            k2_max: 1e6,
            length_floor: 1e-4,
            resample_every: 25,
            snapshot_every: 0,
            n_max: curve::DEFAULT_N_MAX,
            pole_radius: 1e3,
            monitor_length: true,
            monitor_bernstein: true,
            identity_tol: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid initial curve: {0}")]
    Curve(#[from] CurveError),
    #[error("invalid flow parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GeodesicConverged,
    TMaxReached,
    BlowupGuard,
    LengthFloor,
    MonitorViolation,
    ResampleFailure,
    MetricSingular,
}

impl StopReason {
    pub fn exit_code(self) -> i32 {
        match self {
            StopReason::GeodesicConverged | StopReason::TMaxReached | StopReason::LengthFloor => 0,
            StopReason::MonitorViolation => 2,
            StopReason::BlowupGuard | StopReason::MetricSingular | StopReason::ResampleFailure => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StopReason::GeodesicConverged => "geodesic-converged",
            StopReason::TMaxReached => "t-max-reached",
            StopReason::BlowupGuard => "blowup-guard",
            StopReason::LengthFloor => "length-floor",
            StopReason::MonitorViolation => "monitor-violation",
            StopReason::ResampleFailure => "resample-failure",
            StopReason::MetricSingular => "metric-singular",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStop {
    pub reason: StopReason,
    pub detail: String,
}

impl FlowStop {
    pub fn new(reason: StopReason, detail: impl Into<String>) -> Self {
        FlowStop { reason, detail: detail.into() }
    }

    pub fn violation(detail: impl Into<String>) -> Self {
        Self::new(StopReason::MonitorViolation, detail)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Certificate {
    pub final_residual: f64,
    pub last_residuals: Vec<f64>,
    pub sup_d2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopReport {
    pub reason: StopReason,
    pub detail: String,
    pub step: u64,
    pub t: f64,
    pub final_diagnostics: Diagnostics,
    pub certificate: Option<Certificate>,
    /// Whether the initial data was rotated away from the S³ chart pole.
    pub rotated: bool,
}

/// One row of the run trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub step: u64,
    pub t: f64,
    /// Step taken to reach this state (0 for the initial row).
    pub dt: f64,
    pub length: f64,
    pub dl_dt: Option<f64>,
    pub int_k2: f64,
    /// `M_t = max k²`.
    pub m_t: f64,
    /// `κ_t = min k`, signed in dimension 2.
    pub kappa: f64,
    /// `λ_t = max k`, signed in dimension 2.
    pub lambda: f64,
    /// `sup |DⁿT/∂sⁿ|` for `n = 1..=n_max`.
    pub sup_deriv: Vec<f64>,
    pub int_d2: Option<f64>,
    /// `sup_i ((t − t₀)|D²T/∂s²|² + 3k²)`.
    pub bernstein_q: Option<f64>,
    pub l0: f64,
    pub residual_length: Option<f64>,
    pub residual_speed: Option<f64>,
    pub residual_tangent: Option<f64>,
    pub resampled: bool,
    pub mu: Option<f64>,
    pub f: Option<f64>,
    pub df_dt: Option<f64>,
    pub denominator: Option<f64>,
}

impl Diagnostics {
    pub fn from_geometry(geom: &CurveGeometry, step: u64, t0: f64, l0: f64) -> Self {
        let signed = geom.signed_curvature();
        let ks = signed.as_deref().unwrap_or(&geom.curvature);
        let kappa = ks.iter().copied().fold(f64::INFINITY, f64::min);
        let lambda = ks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sup_deriv = (1..=geom.n_max()).map(|n| geom.sup_deriv(n)).collect();
        let (int_d2, bernstein_q) = if geom.n_max() >= 2 {
            let s = geom.t - t0;
            let q = (0..geom.len())
                .map(|i| {
                    let d2 = &geom.derivs[1][i];
                    s * geom.inner_at(i, d2, d2) + 3.0 * geom.curvature[i].powi(2)
                })
                .fold(0.0, f64::max);
            (Some(geom.deriv_energy(2)), Some(q))
        } else {
            (None, None)
        };
        Diagnostics {
            step,
            t: geom.t,
            length: geom.length,
            int_k2: geom.bending_energy,
            m_t: geom.max_k2(),
            kappa,
            lambda,
            sup_deriv,
            int_d2,
            bernstein_q,
            l0,
            ..Default::default()
        }
    }

    /// Geodesic residual `sup |DT/∂s|`.
    pub fn geo_residual(&self) -> f64 {
        self.sup_deriv[0]
    }

    pub fn sup_d2(&self) -> Option<f64> {
        self.sup_deriv.get(1).copied()
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub curve: DiscreteCurve,
    pub t: f64,
    pub step: u64,
    pub f_value: f64,
    pub geometry: CurveGeometry,
}

impl FlowState {
    pub fn new(curve: DiscreteCurve, model: &MetricModel, t: f64, n_max: usize) -> Result<Self, CurveError> {
        Self::with_exec(Exec::default(), curve, model, t, n_max)
    }

    pub fn with_exec(exec: Exec, curve: DiscreteCurve, model: &MetricModel, t: f64, n_max: usize) -> Result<Self, CurveError> {
        let geometry = geometry_with(exec, &curve, model, t, n_max)?;
        Ok(FlowState { curve, t, step: 0, f_value: model.f_value(t), geometry })
    }

    /// Recomputes the cached geometry (after the metric changed).
    pub fn refresh(&mut self, exec: Exec, model: &MetricModel) -> Result<(), CurveError> {
        self.geometry = geometry_with(exec, &self.curve, model, self.t, self.geometry.n_max())?;
        self.f_value = model.f_value(self.t);
        Ok(())
    }
}

/// The flow velocity `DT/∂s` at every node.
pub fn velocity(state: &FlowState) -> Vec<Vector> {
    state.geometry.velocity().to_vec()
}

/// `dt = c_cfl · (min Δs)²`, clamped to `[dt_min, dt_max]`.
pub fn adaptive_dt(geom: &CurveGeometry, c_cfl: f64, dt_min: f64, dt_max: f64) -> f64 {
    let ds = geom.ds.iter().copied().fold(f64::INFINITY, f64::min);
    (c_cfl * ds * ds).clamp(dt_min, dt_max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepError {
    Domain(String),
    Degenerate(String),
    Resample(String),
}

impl StepError {
    fn into_stop(self) -> FlowStop {
        match self {
            StepError::Domain(s) | StepError::Resample(s) => FlowStop::new(StopReason::ResampleFailure, s),
            StepError::Degenerate(s) => FlowStop::new(StopReason::BlowupGuard, s),
        }
    }
}

fn classify(e: CurveError) -> StepError {
    match e {
        CurveError::Degenerate { .. } => StepError::Degenerate(e.to_string()),
        CurveError::Resample(_) => StepError::Resample(e.to_string()),
        other => StepError::Domain(other.to_string()),
    }
}

/// One forward-Euler step using the velocity cached in `state.geometry`,
/// followed by resampling when the step index hits the cadence. Returns the
/// new state and whether it was resampled.
pub fn step(exec: Exec, state: &FlowState, model: &MetricModel, dt: f64, params: &FlowParams) -> Result<(FlowState, bool), StepError> {
    let vel = state.geometry.velocity();
    let delta: Vec<Vector> = vel.iter().map(|v| v * dt).collect();
    let moved = state.curve.displaced(&delta);
    if moved.nodes().iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(StepError::Degenerate("non-finite node after step".into()));
    }
    check_domain(&moved, model, params.pole_radius)?;
    let t = state.t + dt;
    let step_index = state.step + 1;
    let resampled = params.resample_every > 0 && step_index.is_multiple_of(params.resample_every as u64);
    let curve = if resampled {
        curve::resample_arclength_with(exec, &moved, model, t).map_err(classify)?
    } else {
        moved
    };
    let geometry = geometry_with(exec, &curve, model, t, state.geometry.n_max()).map_err(classify)?;
    Ok((FlowState { curve, t, step: step_index, f_value: model.f_value(t), geometry }, resampled))
}

fn is_stereo_sphere(model: &MetricModel) -> bool {
    let inner = match &model.family {
        Family::Conformal { base, .. } => base.as_ref(),
        _ => model,
    };
    matches!(inner.family, Family::SpaceForm { k } if k > 0.0) && inner.dim == 3
}

fn check_domain(curve: &DiscreteCurve, model: &MetricModel, pole_radius: f64) -> Result<(), StepError> {
    for (i, p) in curve.nodes().iter().enumerate() {
        model.check_point(p).map_err(|e| StepError::Domain(format!("node {i}: {e}")))?;
    }
    if is_stereo_sphere(model) && curve.max_chart_radius() > pole_radius {
        return Err(StepError::Domain(format!("a node came within chart radius {pole_radius:e} of the excluded pole")));
    }
    Ok(())
}

/// Rotates S³ initial data away from the stereographic pole when needed.
/// The isometry is the quarter turn in the `(y₃, y₄)` plane of R⁴.
pub fn avoid_pole(curve: &DiscreteCurve, model: &MetricModel, pole_radius: f64) -> Option<DiscreteCurve> {
    if !is_stereo_sphere(model) || curve.max_chart_radius() <= pole_radius {
        return None;
    }
    Some(curve.map_nodes(|p| {
        let y = stereo_to_sphere(p);
        sphere_to_stereo([y[0], y[1], -y[3], y[2]])
    }))
}

/// How the metric moved between two consecutive states, for the modified
/// speed and tangent laws under an evolving metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricDrift {
    Static,
    /// `g_t = exp(f) g₀` with `∂f/∂t = rate`.
    Conformal(f64),
    /// Fiber block `exp(f) ρ²` with `∂f/∂t = rate`.
    Warped(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub length: f64,
    pub speed: f64,
    pub tangent: Option<f64>,
}

/// Consecutive-state checks of `dL/dt = −∫k²ds`, `∂v/∂t = −k²v` and
/// `∇_t T = k²T + D²T/∂s²`, with the metric-drift terms when the metric evolves.
/// The speed and tangent laws need both states on one parameterisation
/// (no resample in between); the length law does not.
pub fn monitor_identities(prev: &CurveGeometry, next: &CurveGeometry, dt: f64, drift: MetricDrift, fiber: Option<usize>) -> Residuals {
    let n = prev.len();
    // ½ ∂_t g(T, T) per node.
    let half_gdot: Vec<f64> = match (drift, fiber) {
        (MetricDrift::Static, _) => vec![0.0; n],
        (MetricDrift::Conformal(rate), _) => vec![0.5 * rate; n],
        (MetricDrift::Warped(rate), Some(fi)) => (0..n)
            .map(|i| {
                let t = prev.tangent[i];
                0.5 * rate * t[fi] * t[fi] * prev.metric[i][(fi, fi)]
            })
            .collect(),
        (MetricDrift::Warped(_), None) => vec![0.0; n],
    };

    let drift_l: f64 = (0..n).map(|i| half_gdot[i] * prev.ds[i]).sum();
    let length = ((next.length - prev.length) / dt + prev.bending_energy - drift_l).abs() / prev.bending_energy.max(1e-12);

    let speed = (0..n)
        .map(|i| {
            let k2v = prev.curvature[i].powi(2) * prev.speed[i];
            let lhs = (next.speed[i] - prev.speed[i]) / dt;
            (lhs + k2v - half_gdot[i] * prev.speed[i]).abs() / k2v.max(1e-8)
        })
        .fold(0.0, f64::max);

    let tangent = match drift {
        MetricDrift::Warped(rate) if rate != 0.0 => None,
        _ => {
            let rate = if let MetricDrift::Conformal(r) = drift { r } else { 0.0 };
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..n {
                let gamma_t = (next.points[i] - prev.points[i]) / dt;
                let lhs = (next.tangent[i] - prev.tangent[i]) / dt + contract(&prev.christoffel[i], prev.dim, &gamma_t, &prev.tangent[i]);
                let k2 = prev.curvature[i].powi(2);
                let d2 = prev.derivs.get(1).map(|d| d[i]).unwrap_or_else(|| prev.covariant_ds(prev.velocity())[i]);
                let rhs = prev.tangent[i] * (k2 - 0.5 * rate) + d2;
                worst = worst.max(prev.norm_at(i, &(lhs - rhs)));
                scale = scale.max(prev.norm_at(i, &rhs));
            }
            Some(worst / scale.max(1e-6))
        }
    };
    Residuals { length, speed, tangent }
}

/// Theorem-6 style short-time window anchored at `t₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernsteinWindow {
    pub t0: f64,
    pub m0: f64,
    pub lambda: f64,
    pub width: f64,
}

impl BernsteinWindow {
    pub fn new(t0: f64, m0: f64, lambda_bound: f64) -> Self {
        let lambda = lambda_bound.max(LAMBDA_FLOOR);
        let width = (1.0 + lambda / (4.0 * m0 + lambda + 1.0)).ln() / (2.0 * lambda);
        BernsteinWindow { t0, m0, lambda, width }
    }

    pub fn contains(&self, t: f64) -> bool {
        t - self.t0 <= self.width
    }

    pub fn m_bound(&self) -> f64 {
        2.0 * self.m0 * (1.0 + BERNSTEIN_SLACK) + BERNSTEIN_FLOOR
    }

    pub fn q_bound(&self) -> f64 {
        16.0 * self.m0 * (1.0 + BERNSTEIN_SLACK) + BERNSTEIN_FLOOR
    }

    /// Checks one trace row; rows outside the window always pass.
    pub fn check(&self, d: &Diagnostics) -> Result<(), String> {
        if !self.contains(d.t) {
            return Ok(());
        }
        if d.m_t > self.m_bound() {
            return Err(format!("Bernstein bound M_t <= 2 M0 violated at t = {:.6e}: M_t = {:.6e}, M0 = {:.6e}", d.t, d.m_t, self.m0));
        }
        if let Some(q) = d.bernstein_q {
            if q > self.q_bound() {
                return Err(format!("Bernstein bound (t-t0)|D2T|^2 + 3k^2 <= 16 M0 violated at t = {:.6e}: {:.6e} vs M0 = {:.6e}", d.t, q, self.m0));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinReport {
    pub window: BernsteinWindow,
    pub rows_checked: usize,
    pub max_m_ratio: f64,
    pub max_q_ratio: f64,
    pub violation: Option<String>,
}

impl BernsteinReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Offline form of the window check over a whole trace.
pub fn bernstein_monitor(trace: &[Diagnostics], model: &MetricModel) -> Option<BernsteinReport> {
    let first = trace.first()?;
    let window = BernsteinWindow::new(first.t, first.m_t, model.lambda_bound);
    let mut report = BernsteinReport { window, rows_checked: 0, max_m_ratio: 0.0, max_q_ratio: 0.0, violation: None };
    for d in trace.iter().take_while(|d| window.contains(d.t)) {
        report.rows_checked += 1;
        report.max_m_ratio = report.max_m_ratio.max(d.m_t / window.m_bound());
        if let Some(q) = d.bernstein_q {
            report.max_q_ratio = report.max_q_ratio.max(q / window.q_bound());
        }
        if report.violation.is_none() {
            report.violation = window.check(d).err();
        }
    }
    Some(report)
}

/// Per-node snapshot row: chart coordinates, then `v, k, τ, h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub coords: Vec<f64>,
    pub v: f64,
    pub k: f64,
    pub tau: Option<f64>,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub t: f64,
    pub rows: Vec<SnapshotRow>,
}

pub fn snapshot(state: &FlowState, model: &MetricModel) -> Snapshot {
    let g = &state.geometry;
    let torsion = if g.dim == 3 { frenet(g).ok().map(|f| f.torsion) } else { None };
    let heights = ramp_height(&state.curve, g, model).ok().map(|r| r.heights);
    let rows = (0..g.len())
        .map(|i| SnapshotRow {
            coords: state.curve.nodes()[i].as_slice()[..g.dim].to_vec(),
            v: g.speed[i],
            k: g.curvature[i],
            tau: torsion.as_ref().and_then(|t| t[i]),
            h: heights.as_ref().map(|h| h[i]),
        })
        .collect();
    Snapshot { step: state.step, t: state.t, rows }
}

/// Hooks for the ramp and evolving-metric drivers.
pub trait FlowObserver {
    fn start(&mut self, _state: &FlowState, _model: &MetricModel, _diag: &mut Diagnostics) -> Result<(), FlowStop> {
        Ok(())
    }

    /// Runs before the Euler step; may update a driven metric in place.
    fn before_step(&mut self, _state: &FlowState, _model: &mut MetricModel, _dt: f64) -> Result<(), FlowStop> {
        Ok(())
    }

    /// Runs after each accepted step; `resampled` marks steps that straddle a
    /// resample, where consecutive-state identities do not apply.
    fn after_step(
        &mut self,
        _prev: &FlowState,
        _next: &FlowState,
        _model: &MetricModel,
        _dt: f64,
        _resampled: bool,
        _diag: &mut Diagnostics,
    ) -> Result<(), FlowStop> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;
impl FlowObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub trace: Vec<Diagnostics>,
    pub snapshots: Vec<Snapshot>,
    pub report: StopReport,
    pub final_state: FlowState,
    pub model: MetricModel,
}

/// Runs the flow until a stop criterion fires.
pub fn run(
    exec: Exec,
    initial: DiscreteCurve,
    mut model: MetricModel,
    params: &FlowParams,
    observer: &mut dyn FlowObserver,
) -> Result<FlowRun, FlowError> {
    validate_params(params)?;
    let rotated_curve = avoid_pole(&initial, &model, params.pole_radius);
    let rotated = rotated_curve.is_some();
    let initial = rotated_curve.unwrap_or(initial);
    initial.validate(&model)?;
    let mut state = FlowState::with_exec(exec, initial, &model, 0.0, params.n_max)?;
    let t0 = state.t;
    let l0 = state.geometry.length;

    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut diag = Diagnostics::from_geometry(&state.geometry, 0, t0, l0);
    if model.is_evolving() {
        diag.f = Some(state.f_value);
    }
    let mut stop = observer.start(&state, &model, &mut diag).err();
    let window = BernsteinWindow::new(t0, diag.m_t, model.lambda_bound);
    if stop.is_none() && params.monitor_bernstein && params.n_max >= 2 {
        stop = window.check(&diag).err().map(FlowStop::violation);
    }
    trace.push(diag);
    if params.snapshot_every > 0 {
        snapshots.push(snapshot(&state, &model));
    }

    let mut below = 0usize;
    let mut recent: Vec<f64> = Vec::new();
    let stop = loop {
        if let Some(s) = stop.take() {
            break s;
        }
        let current = trace.last().expect("initial row");
        let residual = current.geo_residual();
        recent.push(residual);
        if recent.len() > CERTIFICATE_LEN {
            recent.remove(0);
        }
        below = if residual < params.tol_geo { below + 1 } else { 0 };
        if below >= params.geo_window {
            break FlowStop::new(StopReason::GeodesicConverged, format!("sup|DT/ds| < {:e} for {} consecutive steps", params.tol_geo, params.geo_window));
        }
        if !(current.m_t <= params.k2_max) {
            break FlowStop::new(StopReason::BlowupGuard, format!("max k^2 = {:e} exceeds {:e}", current.m_t, params.k2_max));
        }
        if current.length < params.length_floor * l0 {
            break FlowStop::new(StopReason::LengthFloor, format!("length {:e} below {:e} L0", current.length, params.length_floor));
        }
        if state.t >= params.t_max {
            break FlowStop::new(StopReason::TMaxReached, format!("t = {}", state.t));
        }

        let mut dt = adaptive_dt(&state.geometry, params.c_cfl, params.dt_min, params.dt_max);
        if dt <= params.dt_min {
            break FlowStop::new(StopReason::BlowupGuard, "time step reached dt_min");
        }
        let last = state.t + dt >= params.t_max;
        if last {
            dt = params.t_max - state.t;
        }

        let prev_geometry = state.geometry.clone();
        let prev_f = state.f_value;
        if let Err(s) = observer.before_step(&state, &mut model, dt) {
            break s;
        }
        if model.is_evolving() {
            // Velocity under the metric at the end of the step.
            let t_saved = state.t;
            state.t += dt;
            let refreshed = state.refresh(exec, &model);
            state.t = t_saved;
            if let Err(e) = refreshed {
                break classify(e).into_stop();
            }
        }
        let (mut next, resampled) = match step(exec, &state, &model, dt, params) {
            Ok(r) => r,
            Err(e) => break e.into_stop(),
        };
        if last {
            next.t = params.t_max;
        }
        let mut d = Diagnostics::from_geometry(&next.geometry, next.step, t0, l0);
        d.dt = dt;
        d.dl_dt = Some((d.length - prev_geometry.length) / dt);
        d.resampled = resampled;
        if model.is_evolving() {
            d.f = Some(next.f_value);
        }
        let mut violation = None;
        let rate = (next.f_value - prev_f) / dt;
        let drift = match &model.family {
            Family::Conformal { .. } => MetricDrift::Conformal(rate),
            Family::WarpedCircle { .. } => MetricDrift::Warped(rate),
            _ => MetricDrift::Static,
        };
        let r = monitor_identities(&prev_geometry, &next.geometry, dt, drift, model.fiber_index());
        // Length is parameterisation-free; the per-node laws are not.
        d.residual_length = Some(r.length);
        let mut worst = r.length;
        if !resampled {
            d.residual_speed = Some(r.speed);
            d.residual_tangent = r.tangent;
            worst = worst.max(r.speed).max(r.tangent.unwrap_or(0.0));
            if params.monitor_length && d.length > prev_geometry.length + LENGTH_TOL * l0 && !model.is_evolving() {
                violation = Some(FlowStop::violation(format!(
                    "length increased from {:.17e} to {:.17e} at step {}",
                    prev_geometry.length, d.length, next.step
                )));
            }
        }
        if let Some(tol) = params.identity_tol {
            if worst > tol && violation.is_none() {
                violation = Some(FlowStop::violation(format!("identity residual {worst:e} exceeds {tol:e} at step {}", next.step)));
            }
        }
        if violation.is_none() && params.monitor_bernstein && params.n_max >= 2 {
            violation = window.check(&d).err().map(FlowStop::violation);
        }
        let observed = observer.after_step(&state, &next, &model, dt, resampled, &mut d);
        state = next;
        trace.push(d);
        if params.snapshot_every > 0 && state.step % params.snapshot_every as u64 == 0 {
            snapshots.push(snapshot(&state, &model));
        }
        stop = violation.or(observed.err());
    };

    if params.snapshot_every > 0 && snapshots.last().map(|s| s.step) != Some(state.step) {
        snapshots.push(snapshot(&state, &model));
    }
    let final_diag = trace.last().expect("initial row").clone();
    let certificate = (stop.reason == StopReason::GeodesicConverged).then(|| Certificate {
        final_residual: final_diag.geo_residual(),
        last_residuals: recent.clone(),
        sup_d2: final_diag.sup_d2(),
    });
    let report = StopReport {
        reason: stop.reason,
        detail: stop.detail,
        step: state.step,
        t: state.t,
        final_diagnostics: final_diag,
        certificate,
        rotated,
    };
    Ok(FlowRun { trace, snapshots, report, final_state: state, model })
}

fn validate_params(p: &FlowParams) -> Result<(), FlowError> {
    let mut bad = Vec::new();
    for (name, v) in [("c_cfl", p.c_cfl), ("dt_min", p.dt_min), ("dt_max", p.dt_max), ("tol_geo", p.tol_geo), ("k2_max", p.k2_max), ("pole_radius", p.pole_radius)] {
        if !(v > 0.0 && v.is_finite()) {
            bad.push(format!("{name} must be positive"));
        }
    }
    if !(p.t_max >= 0.0) {
        bad.push("t_max must be nonnegative".into());
    }
    if p.dt_min > p.dt_max {
        bad.push("dt_min exceeds dt_max".into());
    }
    if !(1..=4).contains(&p.n_max) {
        bad.push("n_max must be in 1..=4".into());
    }
    if p.geo_window == 0 {
        bad.push("geo_window must be at least 1".into());
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(FlowError::Params(bad.join("; ")))
    }
}
