//! CSV and JSON artifacts. Floats are written as `{:.16e}` (17 significant
//! digits) so traces are reproducible byte for byte and re-checkable offline.

use crate::curve::DiscreteCurve;
use crate::flow::{Diagnostics, Snapshot};
use crate::ramp::RampTrace;
use crate::spaceform_ode::HelixRow;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

/// Column groups of `trace.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceColumns {
    pub n_max: usize,
    pub ramp: bool,
    pub evolving: bool,
    pub warped: bool,
}

impl TraceColumns {
    pub fn plain(n_max: usize) -> Self {
        TraceColumns { n_max, ramp: false, evolving: false, warped: false }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["step", "t", "dt", "L", "dL_dt", "int_k2", "M_t", "kappa", "lambda"].iter().map(|s| s.to_string()).collect();
        h.extend((1..=self.n_max).map(|n| format!("sup_D{n}T")));
        h.extend(["int_D2T2", "bernstein_q", "L0", "residual_length", "residual_speed", "residual_tangent", "resampled"].iter().map(|s| s.to_string()));
        if self.ramp {
            h.push("mu".into());
        }
        if self.evolving {
            h.extend(["f".to_string(), "df_dt".to_string()]);
            if self.warped {
                h.push("denominator".into());
            }
        }
        h
    }

    pub fn record(&self, d: &Diagnostics) -> Vec<String> {
        let mut r = vec![
            d.step.to_string(),
            fmt_f(d.t),
            fmt_f(d.dt),
            fmt_f(d.length),
            fmt_opt(d.dl_dt),
            fmt_f(d.int_k2),
            fmt_f(d.m_t),
            fmt_f(d.kappa),
            fmt_f(d.lambda),
        ];
        r.extend((0..self.n_max).map(|i| fmt_opt(d.sup_deriv.get(i).copied())));
        r.extend([
            fmt_opt(d.int_d2),
            fmt_opt(d.bernstein_q),
            fmt_f(d.l0),
            fmt_opt(d.residual_length),
            fmt_opt(d.residual_speed),
            fmt_opt(d.residual_tangent),
            u8::from(d.resampled).to_string(),
        ]);
        if self.ramp {
            r.push(fmt_opt(d.mu));
        }
        if self.evolving {
            r.extend([fmt_opt(d.f), fmt_opt(d.df_dt)]);
            if self.warped {
                r.push(fmt_opt(d.denominator));
            }
        }
        r
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), IoError> {
    let err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn write_trace(path: &Path, trace: &[Diagnostics], cols: TraceColumns) -> Result<(), IoError> {
    write_csv(path, &cols.header(), trace.iter().map(|d| cols.record(d)))
}

fn coord_header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

/// Writes `snapshots/NNNN.csv` plus `snapshots/index.csv`. Nothing is
/// written for an empty list.
pub fn write_snapshots(dir: &Path, snapshots: &[Snapshot]) -> Result<(), IoError> {
    if snapshots.is_empty() {
        return Ok(());
    }
    let sdir = dir.join("snapshots");
    fs::create_dir_all(&sdir).map_err(|source| IoError::Io { path: sdir.clone(), source })?;
    for (i, s) in snapshots.iter().enumerate() {
        let dim = s.rows.first().map(|r| r.coords.len()).unwrap_or(0);
        let mut header = coord_header(dim);
        header.extend(["v", "k", "tau", "h"].iter().map(|s| s.to_string()));
        let rows = s.rows.iter().map(|r| {
            let mut rec: Vec<String> = r.coords.iter().map(|x| fmt_f(*x)).collect();
            rec.extend([fmt_f(r.v), fmt_f(r.k), fmt_opt(r.tau), fmt_opt(r.h)]);
            rec
        });
        write_csv(&sdir.join(format!("{i:04}.csv")), &header, rows)?;
    }
    let header: Vec<String> = ["index", "step", "t"].iter().map(|s| s.to_string()).collect();
    write_csv(
        &sdir.join("index.csv"),
        &header,
        snapshots.iter().enumerate().map(|(i, s)| vec![format!("{i:04}"), s.step.to_string(), fmt_f(s.t)]),
    )
}

pub fn write_ramp_trace(path: &Path, trace: &RampTrace) -> Result<(), IoError> {
    let header: Vec<String> = ["t", "mu", "kappa", "lambda", "Phi", "Psi"].iter().map(|s| s.to_string()).collect();
    write_csv(path, &header, trace.rows.iter().map(|r| [r.t, r.mu, r.kappa, r.lambda, r.phi, r.psi].iter().map(|x| fmt_f(*x)).collect()))
}

/// Node coordinates of a curve, one row per node.
pub fn write_curve(path: &Path, curve: &DiscreteCurve) -> Result<(), IoError> {
    let dim = curve.dim();
    write_csv(path, &coord_header(dim), curve.nodes().iter().map(|p| p.as_slice()[..dim].iter().map(|x| fmt_f(*x)).collect()))
}

pub fn write_helix(path: &Path, rows: &[HelixRow]) -> Result<(), IoError> {
    let header: Vec<String> = ["t", "k", "tau", "u", "v", "invariant_residual", "diamond_residual"].iter().map(|s| s.to_string()).collect();
    write_csv(
        path,
        &header,
        rows.iter().map(|r| vec![fmt_f(r.t), fmt_f(r.k), fmt_f(r.tau), fmt_f(r.u), fmt_f(r.v), fmt_opt(r.invariant_residual), fmt_opt(r.diamond_residual)]),
    )
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })
}

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>` of the
/// concatenated inputs.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    let mut h = Sha256::new();
    h.update(format!("blob {len}\0").as_bytes());
    for p in parts {
        h.update(p);
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f(-2.5), "-2.5000000000000000e0");
    }

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        let cols = TraceColumns::plain(2);
        write_trace(&p, &[], cols).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), cols.header().join(","));
    }

    #[test]
    fn no_snapshots_no_directory() {
        let dir = tempfile::tempdir().unwrap();
        write_snapshots(dir.path(), &[]).unwrap();
        assert!(!dir.path().join("snapshots").exists());
    }

    #[test]
    fn hash_matches_git_blob_framing() {
        // Same framing as a git blob object.
        let h = content_hash(&[b"hello\n"]);
        let mut s = Sha256::new();
        s.update(b"blob 6\0hello\n");
        assert_eq!(h, format!("sha256:{}", hex::encode(s.finalize())));
        assert_eq!(content_hash(&[b"hel", b"lo\n"]), h);
    }
}
