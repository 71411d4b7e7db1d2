//! Run configuration: layered TOML (defaults < command defaults < file <
//! flags), per-key provenance, unknown-key rejection and full validation.

use crate::flow::FlowParams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;
use toml::{Table, Value};

/// Override values are TOML values.
pub use toml::Value as ConfigValue;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {msg}")]
    Syntax { path: String, msg: String },
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("unknown config key(s): {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Flow,
    Helix,
    Ramp,
    Conformal,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Flow => "flow",
            Command::Helix => "helix",
            Command::Ramp => "ramp",
            Command::Conformal => "conformal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldConfig {
    /// euclidean | sphere3 | hyperbolic3 | product | conformal | warped-circle
    pub family: String,
    pub dim: usize,
    /// Base of product, conformal and warped families:
    /// euclidean | circle | sphere2 | sphere3 | hyperbolic3
    pub base: String,
    pub base_dim: usize,
    pub base_radius: f64,
    pub rho: f64,
    /// driven | zero | linear
    pub f_policy: String,
    pub f_rate: f64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            family: "euclidean".into(),
            dim: 2,
            base: "euclidean".into(),
            base_dim: 2,
            base_radius: 1.0,
            rho: 1.0,
            f_policy: "zero".into(),
            f_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    /// circle | ellipse | perturbed-circle | torus-winding | clifford | points-file
    pub init: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub radius: f64,
    pub a: f64,
    pub b: f64,
    pub amp: f64,
    pub mode: u32,
    pub noise: f64,
    pub winding: [i64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            init: "circle".into(),
            n: 256,
            radius: 1.0,
            a: 2.0,
            b: 1.0,
            amp: 0.0,
            mode: 3,
            noise: 0.0,
            winding: [1, 1],
            path: None,
            shift: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into(), snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HelixConfig {
    #[serde(rename = "K")]
    pub big_k: f64,
    pub k0: f64,
    pub tau0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub out: String,
}

impl Default for HelixConfig {
    fn default() -> Self {
        HelixConfig { big_k: -1.0, k0: 1.0, tau0: 1.0, t_end: 10.0, dt: 1e-3, out: "trace.csv".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub manifold: ManifoldConfig,
    pub curve: CurveConfig,
    pub flow: FlowParams,
    pub output: OutputConfig,
    pub helix: HelixConfig,
}

/// Where a resolved key's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Default,
    CommandDefault,
    File,
    Flag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    /// Source of every key that was set above the built-in defaults.
    pub provenance: BTreeMap<String, Source>,
}

/// Optional keys absent from the serialised defaults.
const OPTIONAL_KEYS: &[&str] = &["curve.path", "curve.shift", "flow.identity_tol"];

/// All accepted dotted keys.
pub fn known_keys() -> Vec<String> {
    let v = Value::try_from(RunConfig::default()).expect("defaults serialise");
    let mut keys = Vec::new();
    flatten("", &v, &mut keys);
    keys.extend(OPTIONAL_KEYS.iter().map(|s| s.to_string()));
    keys.sort();
    keys
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn leaves(prefix: &str, v: &Value, known: &[String], out: &mut Vec<String>) {
    match v {
        Value::Table(t) if !known.iter().any(|k| k == prefix) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(&key, v, known, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        cur = entry.as_table_mut().expect("table");
    }
    cur.insert(last.to_string(), value);
}

/// Parses an override value as a TOML literal, falling back to a string.
pub fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Override(s.into()))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(ConfigError::Override(s.into()));
    }
    Ok((k.to_string(), parse_value(v.trim())))
}

/// Defaults specific to a subcommand.
pub fn command_defaults(cmd: Command) -> Vec<(&'static str, Value)> {
    let s = |x: &str| Value::String(x.into());
    match cmd {
        Command::Flow | Command::Helix => vec![],
        Command::Ramp => vec![
            ("manifold.family", s("product")),
            ("manifold.base", s("circle")),
            ("curve.init", s("torus-winding")),
            ("curve.winding", Value::Array(vec![Value::Integer(1), Value::Integer(2)])),
            ("flow.t_max", Value::Float(100.0)),
        ],
        Command::Conformal => vec![
            ("manifold.family", s("conformal")),
            ("manifold.f_policy", s("driven")),
            ("flow.t_max", Value::Float(2.0)),
            ("flow.monitor_length", Value::Boolean(false)),
        ],
    }
}

/// Builds the resolved configuration from an optional file and flag
/// overrides (applied in order, later wins).
pub fn resolve(cmd: Command, file: Option<&Path>, flags: &[(String, Value)]) -> Result<Resolved, ConfigError> {
    let file_table = match file {
        Some(p) => {
            let path = p.display().to_string();
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            text.parse::<Table>().map_err(|e| ConfigError::Syntax { path, msg: e.to_string() })?
        }
        None => Table::new(),
    };
    resolve_table(cmd, file_table, flags)
}

pub fn resolve_table(cmd: Command, file_table: Table, flags: &[(String, Value)]) -> Result<Resolved, ConfigError> {
    let known = known_keys();
    let mut unknown = Vec::new();
    let mut file_keys = Vec::new();
    leaves("", &Value::Table(file_table.clone()), &known, &mut file_keys);
    for k in &file_keys {
        if !known.contains(k) {
            unknown.push(k.clone());
        }
    }
    for (k, _) in flags {
        if !known.contains(k) {
            unknown.push(k.clone());
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(ConfigError::UnknownKeys(unknown));
    }

    let mut table = Table::new();
    let mut provenance = BTreeMap::new();
    for (k, v) in command_defaults(cmd) {
        set_path(&mut table, k, v);
        provenance.insert(k.to_string(), Source::CommandDefault);
    }
    for k in &file_keys {
        let v = lookup(&file_table, k).expect("leaf exists").clone();
        set_path(&mut table, k, v);
        provenance.insert(k.clone(), Source::File);
    }
    for (k, v) in flags {
        set_path(&mut table, k, v.clone());
        provenance.insert(k.clone(), Source::Flag);
    }
    set_path(&mut table, "command", Value::String(cmd.to_string()));
    provenance.remove("command");

    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(vec![e.message().to_string()]))?;
    let problems = validate(&config);
    if !problems.is_empty() {
        return Err(ConfigError::Invalid(problems));
    }
    if let Ok(Value::Table(full)) = Value::try_from(&config) {
        for k in leaf_keys(&full, "") {
            provenance.entry(k).or_insert(Source::Default);
        }
    }
    provenance.remove("command");
    Ok(Resolved { config, provenance })
}

fn leaf_keys(t: &Table, prefix: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(inner) => out.extend(leaf_keys(inner, &key)),
            _ => out.push(key),
        }
    }
    out
}

fn lookup<'a>(t: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut cur = t.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

const FAMILIES: &[&str] = &["euclidean", "sphere3", "hyperbolic3", "product", "conformal", "warped-circle"];
const BASES: &[&str] = &["euclidean", "circle", "sphere2", "sphere3", "hyperbolic3"];
const INITS: &[&str] = &["circle", "ellipse", "perturbed-circle", "torus-winding", "clifford", "points-file"];
const POLICIES: &[&str] = &["driven", "zero", "linear"];

/// Every rule violation, in a stable order.
pub fn validate(c: &RunConfig) -> Vec<String> {
    let mut bad = Vec::new();
    let mut positive = |name: &str, v: f64| {
        if !(v > 0.0 && v.is_finite()) {
            bad.push(format!("{name} must be positive and finite (got {v})"));
        }
    };
    let f = &c.flow;
    positive("flow.c_cfl", f.c_cfl);
    positive("flow.dt_min", f.dt_min);
    positive("flow.dt_max", f.dt_max);
    positive("flow.tol_geo", f.tol_geo);
    positive("flow.k2_max", f.k2_max);
    positive("flow.length_floor", f.length_floor);
    positive("flow.pole_radius", f.pole_radius);
    if let Some(t) = f.identity_tol {
        positive("flow.identity_tol", t);
    }
    positive("manifold.rho", c.manifold.rho);
    positive("manifold.base_radius", c.manifold.base_radius);
    positive("curve.radius", c.curve.radius);
    positive("curve.a", c.curve.a);
    positive("curve.b", c.curve.b);
    if c.command == Command::Helix {
        positive("helix.dt", c.helix.dt);
    }

    if !(f.t_max >= 0.0 && f.t_max.is_finite()) {
        bad.push(format!("flow.t_max must be nonnegative and finite (got {})", f.t_max));
    }
    if f.dt_min > f.dt_max {
        bad.push("flow.dt_min exceeds flow.dt_max".into());
    }
    if !(1..=4).contains(&f.n_max) {
        bad.push(format!("flow.n_max must be in 1..=4 (got {})", f.n_max));
    }
    if f.geo_window == 0 {
        bad.push("flow.geo_window must be at least 1".into());
    }
    let n = c.curve.n;
    if c.curve.init != "points-file" && !(n.is_power_of_two() && (16..=4096).contains(&n)) {
        bad.push(format!("curve.N must be a power of two between 16 and 4096 (got {n})"));
    }
    for (name, v) in [("curve.amp", c.curve.amp), ("curve.noise", c.curve.noise), ("manifold.f_rate", c.manifold.f_rate)] {
        if !v.is_finite() {
            bad.push(format!("{name} must be finite"));
        }
    }

    let m = &c.manifold;
    if !FAMILIES.contains(&m.family.as_str()) {
        bad.push(format!("manifold.family `{}` is not one of {}", m.family, FAMILIES.join(", ")));
    }
    let uses_base = matches!(m.family.as_str(), "product" | "conformal" | "warped-circle");
    if uses_base && !BASES.contains(&m.base.as_str()) {
        bad.push(format!("manifold.base `{}` is not one of {}", m.base, BASES.join(", ")));
    }
    if m.family == "euclidean" && !(2..=4).contains(&m.dim) {
        bad.push(format!("manifold.dim must be in 2..=4 for euclidean (got {})", m.dim));
    }
    if uses_base && m.base == "euclidean" && !(2..=3).contains(&m.base_dim) {
        bad.push(format!("manifold.base_dim must be 2 or 3 (got {})", m.base_dim));
    }
    if m.family == "conformal" && m.base == "circle" {
        bad.push("conformal family needs a base of dimension at least 2".into());
    }
    if !POLICIES.contains(&m.f_policy.as_str()) {
        bad.push(format!("manifold.f_policy `{}` is not one of {}", m.f_policy, POLICIES.join(", ")));
    }
    if m.f_policy == "driven" && c.command != Command::Conformal && matches!(m.family.as_str(), "conformal" | "warped-circle") {
        bad.push("manifold.f_policy `driven` is only available with the conformal command".into());
    }
    if c.command == Command::Conformal && !matches!(m.family.as_str(), "conformal" | "warped-circle") {
        bad.push(format!("the conformal command needs family conformal or warped-circle (got {})", m.family));
    }
    if c.command == Command::Ramp && !matches!(m.family.as_str(), "product" | "warped-circle") {
        bad.push(format!("the ramp command needs a product family (got {})", m.family));
    }

    let cv = &c.curve;
    if !INITS.contains(&cv.init.as_str()) {
        bad.push(format!("curve.init `{}` is not one of {}", cv.init, INITS.join(", ")));
    }
    if cv.init == "points-file" && cv.path.is_none() {
        bad.push("curve.init = points-file needs curve.path".into());
    }
    if cv.init == "torus-winding" && !matches!(m.family.as_str(), "product" | "warped-circle") {
        bad.push("curve.init = torus-winding needs a product family".into());
    }
    if cv.init == "clifford" && m.family != "sphere3" && !(m.family == "conformal" && m.base == "sphere3") {
        bad.push("curve.init = clifford needs the sphere3 family".into());
    }
    if cv.init == "clifford" && !(cv.radius > 0.0 && cv.radius < 1.0) {
        bad.push(format!("curve.radius must lie in (0, 1) for clifford (got {})", cv.radius));
    }
    if cv.init == "torus-winding" && cv.winding[1] == 0 {
        bad.push("curve.winding must turn around the fiber (q != 0) to be a ramp".into());
    }
    if let Some(s) = &cv.shift {
        if s.len() > 4 {
            bad.push("curve.shift has more than 4 components".into());
        }
    }

    if c.output.dir.trim().is_empty() {
        bad.push("output.dir must not be empty".into());
    }
    let h = &c.helix;
    if c.command == Command::Helix {
        if ![-1.0, 0.0, 1.0].contains(&h.big_k) {
            bad.push(format!("helix.K must be -1, 0 or 1 (got {})", h.big_k));
        }
        if !(h.t_end >= 0.0 && h.t_end.is_finite()) {
            bad.push(format!("helix.t_end must be nonnegative and finite (got {})", h.t_end));
        }
        if !(h.k0 >= 0.0 && h.k0.is_finite()) {
            bad.push(format!("helix.k0 must be nonnegative (got {})", h.k0));
        }
        if !h.tau0.is_finite() {
            bad.push("helix.tau0 must be finite".into());
        }
        if h.out.trim().is_empty() {
            bad.push("helix.out must not be empty".into());
        }
    }
    bad
}

impl RunConfig {
    /// Reparses a configuration serialised as JSON (as stored in `report.json`).
    pub fn from_json(v: &serde_json::Value) -> Result<Self, ConfigError> {
        serde_json::from_value(v.clone()).map_err(|e| ConfigError::Invalid(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
