//! `geoflow <subcommand> --config path [flag overrides]`.
//!
//! Exit codes: 0 clean stop, 2 monitor violation, 3 configuration error,
//! 4 numeric abort, 1 I/O failure.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use geoflow_core::app::{self, AppError};
use geoflow_core::config::{self, Command, ConfigValue};
use geoflow_core::par::Exec;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "geoflow", version, about = "Curve shortening flow on model Riemannian manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Flow a closed curve until a stop criterion fires.
    Flow {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the (k, tau) system of a helix in a space form.
    Helix {
        #[command(flatten)]
        io: ConfigArgs,
        /// Sectional curvature: -1, 0 or 1.
        #[arg(long = "K", allow_hyphen_values = true)]
        big_k: Option<f64>,
        #[arg(long)]
        k0: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        tau0: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Output CSV file.
        #[arg(long)]
        out: Option<String>,
    },
    /// Flow a ramp on a product with a circle to a closed geodesic.
    Ramp {
        #[command(flatten)]
        common: Common,
        /// circle | sphere2 | euclidean | sphere3 | hyperbolic3
        #[arg(long)]
        base: Option<String>,
        /// Fiber radius.
        #[arg(long)]
        rho: Option<f64>,
        /// Turns around the base and around the fiber.
        #[arg(long, num_args = 2, value_names = ["P", "Q"], allow_hyphen_values = true)]
        winding: Option<Vec<i64>>,
        /// Perturbation amplitude and mode.
        #[arg(long, num_args = 2, value_names = ["AMP", "MODE"])]
        perturb: Option<Vec<String>>,
    },
    /// Flow under a conformally or warped evolving metric.
    Conformal {
        #[command(flatten)]
        common: Common,
        /// conformal | warped
        #[arg(long)]
        mode: Option<String>,
        /// driven | zero | linear
        #[arg(long)]
        f_policy: Option<String>,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key (repeatable), e.g. `--set flow.tol_geo=1e-6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct Common {
    #[command(flatten)]
    io: ConfigArgs,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    tol_geo: Option<f64>,
    #[arg(long)]
    c_cfl: Option<f64>,
    #[arg(long)]
    dt_max: Option<f64>,
    #[arg(long)]
    resample_every: Option<usize>,
    /// Number of nodes.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run the numerical core on one thread.
    #[arg(long)]
    sequential: bool,
}

struct Overrides(Vec<(String, ConfigValue)>);

impl Overrides {
    fn put(&mut self, key: &str, v: Option<impl Into<ConfigValue>>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.into()));
        }
    }
}

fn uint(v: Option<impl TryInto<i64>>) -> Option<ConfigValue> {
    v.map(|x| ConfigValue::Integer(x.try_into().unwrap_or(i64::MAX)))
}

fn start(io: &ConfigArgs) -> Result<Overrides, AppError> {
    let mut o = Overrides(Vec::new());
    for s in &io.set {
        o.0.push(config::parse_override(s)?);
    }
    Ok(o)
}

fn common(o: &mut Overrides, c: &Common) {
    o.put("flow.t_max", c.t_max);
    o.put("flow.tol_geo", c.tol_geo);
    o.put("flow.c_cfl", c.c_cfl);
    o.put("flow.dt_max", c.dt_max);
    o.put("flow.resample_every", uint(c.resample_every));
    o.put("curve.N", uint(c.n));
    o.put("output.dir", c.out.clone());
    o.put("output.snapshot_every", uint(c.snapshot_every));
    o.put("seed", uint(c.seed));
}

fn resolve(cli: &Cli) -> Result<(config::Resolved, Exec), AppError> {
    let (cmd, io, o, sequential) = match &cli.command {
        Cmd::Flow { common: c } => {
            let mut o = start(&c.io)?;
            common(&mut o, c);
            (Command::Flow, &c.io, o, c.sequential)
        }
        Cmd::Helix { io, big_k, k0, tau0, t_end, dt, out } => {
            let mut o = start(io)?;
            o.put("helix.K", *big_k);
            o.put("helix.k0", *k0);
            o.put("helix.tau0", *tau0);
            o.put("helix.t_end", *t_end);
            o.put("helix.dt", *dt);
            o.put("helix.out", out.clone());
            (Command::Helix, io, o, false)
        }
        Cmd::Ramp { common: c, base, rho, winding, perturb } => {
            let mut o = start(&c.io)?;
            common(&mut o, c);
            o.put("manifold.base", base.clone());
            o.put("manifold.rho", *rho);
            o.put("curve.winding", winding.as_ref().map(|w| ConfigValue::Array(w.iter().map(|x| ConfigValue::Integer(*x)).collect())));
            if let Some(p) = perturb {
                o.0.push(("curve.amp".into(), config::parse_value(&p[0])));
                o.0.push(("curve.mode".into(), config::parse_value(&p[1])));
            }
            (Command::Ramp, &c.io, o, c.sequential)
        }
        Cmd::Conformal { common: c, mode, f_policy } => {
            let mut o = start(&c.io)?;
            common(&mut o, c);
            let family = mode.as_deref().map(|m| match m {
                "warped" => "warped-circle".to_string(),
                other => other.to_string(),
            });
            o.put("manifold.family", family);
            o.put("manifold.f_policy", f_policy.clone());
            (Command::Conformal, &c.io, o, c.sequential)
        }
    };
    let resolved = config::resolve(cmd, io.config.as_deref(), &o.0)?;
    let exec = if sequential { Exec::Sequential } else { Exec::default() };
    Ok((resolved, exec))
}

fn run(cli: &Cli) -> Result<i32, AppError> {
    let (resolved, exec) = resolve(cli)?;
    let outcome = app::execute(&resolved, exec)?;
    println!("{}: {} ({})", outcome.reason, outcome.detail, outcome.output.display());
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli).context("geoflow") {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let code = e.downcast_ref::<AppError>().map(AppError::exit_code).unwrap_or(1);
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
