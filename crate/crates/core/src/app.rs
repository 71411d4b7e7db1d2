//! Subcommand dispatch: builds the model and initial curve from a resolved
//! configuration, runs it, and writes the artifacts.

use crate::config::{Command, ConfigError, Resolved, RunConfig};
use crate::curve::{CurveError, DiscreteCurve};
use crate::evolving_metric::{monitor_mt, EvolvingMode, EvolvingObserver};
use crate::flow::{self, bernstein_monitor, FlowObserver, FlowRun, NoObserver, StopReason};
use crate::generators::{self, GeneratorError};
use crate::io::{self, IoError, TraceColumns};
use crate::manifold::{FPolicy, ManifoldError, MetricModel, Vector};
use crate::par::Exec;
use crate::ramp::{self, prop18_bounds, RampError};
use crate::spaceform_ode::{self, HelixState};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// The configuration is well formed but cannot be set up (bad initial
    /// curve, unreadable points file, non-ramp input, ...).
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Setup(_) => 3,
            AppError::Io(_) => 1,
        }
    }
}

macro_rules! setup_from {
    ($($t:ty),*) => {$(
        impl From<$t> for AppError {
            fn from(e: $t) -> Self {
                AppError::Setup(e.to_string())
            }
        }
    )*};
}
setup_from!(ManifoldError, CurveError, GeneratorError, flow::FlowError, spaceform_ode::OdeError);

impl From<RampError> for AppError {
    fn from(e: RampError) -> Self {
        AppError::Setup(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    /// Stop reason name, or `completed` for a helix run that reached `t_end`.
    pub reason: String,
    pub detail: String,
    /// Directory (flow commands) or file (`helix`) written.
    pub output: PathBuf,
}

fn base_model(c: &RunConfig) -> Result<MetricModel, AppError> {
    let m = &c.manifold;
    Ok(match m.base.as_str() {
        "euclidean" => MetricModel::euclidean(m.base_dim)?,
        "circle" => MetricModel::circle(m.base_radius)?,
        "sphere2" => MetricModel::sphere(2)?,
        "sphere3" => MetricModel::sphere3(),
        "hyperbolic3" => MetricModel::hyperbolic3(),
        other => return Err(AppError::Setup(format!("unknown base {other}"))),
    })
}

fn f_policy(c: &RunConfig) -> FPolicy {
    match c.manifold.f_policy.as_str() {
        "linear" => FPolicy::Linear { rate: c.manifold.f_rate },
        "driven" => FPolicy::Driven(0.0),
        _ => FPolicy::Zero,
    }
}

pub fn build_model(c: &RunConfig) -> Result<MetricModel, AppError> {
    let m = &c.manifold;
    Ok(match m.family.as_str() {
        "euclidean" => MetricModel::euclidean(m.dim)?,
        "sphere3" => MetricModel::sphere3(),
        "hyperbolic3" => MetricModel::hyperbolic3(),
        "product" => MetricModel::product(base_model(c)?, m.rho)?,
        "conformal" => MetricModel::conformal(base_model(c)?, f_policy(c))?,
        "warped-circle" => MetricModel::warped_circle(base_model(c)?, m.rho, f_policy(c))?,
        other => return Err(AppError::Setup(format!("unknown family {other}"))),
    })
}

fn shift_vector(c: &RunConfig) -> Vector {
    let mut v = Vector::zeros();
    for (i, x) in c.curve.shift.iter().flatten().enumerate() {
        v[i] = *x;
    }
    v
}

pub fn build_curve(c: &RunConfig, model: &MetricModel) -> Result<DiscreteCurve, AppError> {
    let cv = &c.curve;
    let dim = model.dim;
    let [p, q] = cv.winding;
    let curve = match cv.init.as_str() {
        "circle" => generators::circle(cv.n, dim, cv.radius)?,
        "ellipse" => generators::ellipse(cv.n, dim, cv.a, cv.b)?,
        "perturbed-circle" => generators::perturbed_circle(cv.n, dim, cv.radius, cv.amp, cv.mode, cv.noise, c.seed)?,
        "torus-winding" => generators::torus_winding(cv.n, model, p, q, cv.radius, cv.amp, cv.mode)?,
        "clifford" => generators::clifford(cv.n, cv.radius, p, q)?,
        "points-file" => {
            let path = cv.path.as_deref().ok_or_else(|| AppError::Setup("points-file needs curve.path".into()))?;
            generators::points_file(Path::new(path), dim, shift_vector(c))?
        }
        other => return Err(AppError::Setup(format!("unknown curve.init {other}"))),
    };
    Ok(curve)
}

/// Hash over the resolved configuration and any input file it names.
/// Hash of the resolved configuration (minus the output directory) and any
/// points file, so reruns into different directories share a hash.
pub fn input_hash(c: &RunConfig) -> Result<String, AppError> {
    let mut hashed = c.clone();
    hashed.output.dir.clear();
    let text = hashed.to_toml();
    let extra = match (&c.curve.init[..], &c.curve.path) {
        ("points-file", Some(p)) => std::fs::read(p).map_err(|e| AppError::Setup(format!("cannot read {p}: {e}")))?,
        _ => Vec::new(),
    };
    Ok(io::content_hash(&[text.as_bytes(), &extra]))
}

fn evolving_mode(model: &MetricModel) -> EvolvingMode {
    if model.fiber_index().is_some() {
        EvolvingMode::Warped
    } else {
        EvolvingMode::Conformal
    }
}

fn columns(c: &RunConfig, model: &MetricModel) -> TraceColumns {
    let evolving = model.is_evolving();
    TraceColumns {
        n_max: c.flow.n_max,
        ramp: c.command == Command::Ramp,
        evolving,
        warped: evolving && evolving_mode(model) == EvolvingMode::Warped,
    }
}

fn write_flow_artifacts(dir: &Path, run: &FlowRun, cols: TraceColumns) -> Result<(), AppError> {
    io::write_trace(&dir.join("trace.csv"), &run.trace, cols)?;
    io::write_snapshots(dir, &run.snapshots)?;
    Ok(())
}

fn report_json(resolved: &Resolved, hash: &str, run: &FlowRun, monitors: Value, started: Instant) -> Value {
    json!({
        "command": resolved.config.command,
        "config": resolved.config,
        "provenance": resolved.provenance,
        "input_hash": hash,
        "family": run.model.family_name(),
        "stop": run.report,
        "exit_code": run.report.reason.exit_code(),
        "steps": run.report.step,
        "monitors": monitors,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn outcome(run: &FlowRun, dir: &Path) -> Outcome {
    let r = &run.report;
    Outcome { exit_code: r.reason.exit_code(), reason: r.reason.name().into(), detail: r.detail.clone(), output: dir.to_path_buf() }
}

/// Runs one subcommand and writes its artifacts.
pub fn execute(resolved: &Resolved, exec: Exec) -> Result<Outcome, AppError> {
    let c = &resolved.config;
    if c.command == Command::Helix {
        return execute_helix(c);
    }
    let started = Instant::now();
    let hash = input_hash(c)?;
    let model = build_model(c)?;
    let curve = build_curve(c, &model)?;
    let mut params = c.flow.clone();
    params.snapshot_every = c.output.snapshot_every;
    let cols = columns(c, &model);
    let dir = PathBuf::from(&c.output.dir);

    match c.command {
        Command::Ramp => {
            let result = ramp::run_ramp(exec, curve, model, &params, false)?;
            let run = &result.run;
            io::ensure_dir(&dir)?;
            write_flow_artifacts(&dir, run, cols)?;
            io::write_ramp_trace(&dir.join("ramp_trace.csv"), &result.trace)?;
            io::write_curve(&dir.join("geodesic.csv"), &run.final_state.curve)?;
            let mu = ramp::monitor_mu(&result.trace, false).ok();
            let monitors = json!({
                "mu": mu,
                "prop18": prop18_bounds(&result.trace, result.trace.xi),
                "initial_windings": result.initial_windings,
                "final_windings": result.final_windings,
                "sup_d1": result.sup_d1,
                "sup_d2": result.sup_d2,
                "bernstein": bernstein_monitor(&run.trace, &run.model),
            });
            io::write_json(&dir.join("report.json"), &report_json(resolved, &hash, run, monitors, started))?;
            Ok(outcome(run, &dir))
        }
        _ => {
            let mut evolving = model.is_evolving().then(|| {
                let drive = matches!(f_policy(c), FPolicy::Driven(_));
                EvolvingObserver::new(evolving_mode(&model), drive)
            });
            let observer: &mut dyn FlowObserver = match evolving.as_mut() {
                Some(o) => o,
                None => &mut NoObserver,
            };
            let run = flow::run(exec, curve, model, &params, observer)?;
            io::ensure_dir(&dir)?;
            write_flow_artifacts(&dir, &run, cols)?;
            let mut monitors = json!({ "bernstein": bernstein_monitor(&run.trace, &run.model) });
            if evolving.is_some() {
                monitors["m_t"] = json!(monitor_mt(&run.trace));
            }
            io::write_json(&dir.join("report.json"), &report_json(resolved, &hash, &run, monitors, started))?;
            Ok(outcome(&run, &dir))
        }
    }
}

fn execute_helix(c: &RunConfig) -> Result<Outcome, AppError> {
    let h = &c.helix;
    let traj = spaceform_ode::integrate(HelixState::new(h.k0, h.tau0, h.big_k), h.t_end, h.dt)?;
    let out = PathBuf::from(&h.out);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        io::ensure_dir(parent)?;
    }
    io::write_helix(&out, &spaceform_ode::helix_rows(&traj))?;
    let last = traj.last();
    Ok(match traj.blowup {
        Some(b) => Outcome {
            exit_code: StopReason::BlowupGuard.exit_code(),
            reason: StopReason::BlowupGuard.name().into(),
            detail: format!("k = {:e} at t = {}", b.k, b.t),
            output: out,
        },
        None => Outcome { exit_code: 0, reason: "completed".into(), detail: format!("t = {}, k = {:e}, tau = {:e}", last.t, last.k, last.tau), output: out },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_override, resolve_table};

    fn resolved(cmd: Command, kv: &[&str], dir: &Path) -> Resolved {
        let mut flags: Vec<_> = kv.iter().map(|s| parse_override(s).unwrap()).collect();
        flags.push(("output.dir".into(), toml::Value::String(dir.display().to_string())));
        resolve_table(cmd, toml::Table::new(), &flags).unwrap()
    }

    #[test]
    fn flow_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let r = resolved(Command::Flow, &["curve.N=64", "flow.t_max=0.01", "output.snapshot_every=5"], dir.path());
        let out = execute(&r, Exec::Sequential).unwrap();
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.reason, "t-max-reached");
        for f in ["trace.csv", "report.json", "snapshots/0000.csv", "snapshots/index.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(RunConfig::from_json(&report["config"]).unwrap(), r.config);
        assert!(report["input_hash"].as_str().unwrap().starts_with("sha256:"));
    }

    #[test]
    fn non_ramp_input_is_a_setup_error() {
        let dir = tempfile::tempdir().unwrap();
        let pts = dir.path().join("pts.txt");
        let text: String = (0..64)
            .map(|i| {
                let u = std::f64::consts::TAU * i as f64 / 64.0;
                format!("{} {}\n", u, 0.1 * u.sin())
            })
            .collect();
        std::fs::write(&pts, text).unwrap();
        let r = resolved(
            Command::Ramp,
            &["curve.init=\"points-file\"", &format!("curve.path=\"{}\"", pts.display()), "curve.shift=[6.283185307179586, 0.0]"],
            dir.path(),
        );
        let err = execute(&r, Exec::Sequential).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        assert!(err.to_string().contains("not a ramp"));
    }

    #[test]
    fn helix_writes_trace() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("h.csv");
        let r = resolved(Command::Helix, &["helix.t_end=1.0", &format!("helix.out=\"{}\"", out.display())], dir.path());
        let o = execute(&r, Exec::Sequential).unwrap();
        assert_eq!(o.exit_code, 0);
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.starts_with("t,k,tau,u,v,invariant_residual,diamond_residual"));
        assert_eq!(text.lines().count(), 1002);
    }
}
