//! Report assembly and emission. Numbers are written with the shortest
//! round-trip decimal representation; emission is single-threaded and
//! ordered, so identical inputs give byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use crate::geometry::V3;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutFormat {
    Csv,
    JsonLines,
}

impl OutFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "csv" => Ok(OutFormat::Csv),
            "jsonl" => Ok(OutFormat::JsonLines),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            OutFormat::Csv => "csv",
            OutFormat::JsonLines => "jsonl",
        }
    }
}

/// One estimate (or oracle evaluation) at a grid point.
#[derive(Clone, Debug)]
pub struct PointEstimate {
    pub n: usize,
    pub mesh: f64,
    pub x: V3,
    pub estimate: Vec<Complex64>,
    pub stderr: Vec<f64>,
    pub oracle: Option<Vec<Complex64>>,
    pub samples: u64,
    pub rejected: u64,
    pub max_weight_norm: f64,
}

impl PointEstimate {
    /// Norm over components of the estimate-minus-oracle vector.
    pub fn error_norm(&self) -> Option<f64> {
        self.oracle.as_ref().map(|oracle| {
            self.estimate
                .iter()
                .zip(oracle)
                .map(|(e, o)| (e - o).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
    }

    /// Norm over components of the standard errors.
    pub fn stderr_norm(&self) -> f64 {
        self.stderr.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Per-partition summary of a convergence sweep.
#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub n: usize,
    pub mesh: f64,
    pub sup_error: Option<f64>,
    pub l2_error: Option<f64>,
    pub max_stderr: f64,
    pub rejected: u64,
}

/// Reproducibility metadata attached to every convergence report.
#[derive(Clone, Debug, Serialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub crate_version: String,
    /// The fixed estimator conventions this artifact uses.
    pub conventions: String,
    pub oracle: String,
}

pub fn conventions_string() -> String {
    "energy = |v|^2 t / 4; segment velocity variance = 2/delta_tau; L = -(sum d^2) + V".into()
}

/// A full convergence report: per-point rows, per-level summaries, metadata.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub points: Vec<PointEstimate>,
    pub levels: Vec<LevelSummary>,
    pub metadata: ReportMetadata,
    /// Whether sections are complex (adds `im*` component rows).
    pub complex: bool,
    /// Number of chart coordinates per point.
    pub coords: usize,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(contents.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn coord_headers(coords: usize) -> String {
    (0..coords).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

fn coord_values(x: &V3, coords: usize) -> String {
    (0..coords).map(|i| format!("{}", x[i])).collect::<Vec<_>>().join(",")
}

/// Component rows of a point: `(label, estimate part, stderr, oracle part)`.
fn component_rows(
    p: &PointEstimate,
    complex: bool,
) -> Vec<(String, f64, f64, Option<f64>)> {
    let mut rows = Vec::new();
    for (c, est) in p.estimate.iter().enumerate() {
        let oracle_re = p.oracle.as_ref().map(|o| o[c].re);
        rows.push((format!("re{c}"), est.re, p.stderr[c], oracle_re));
        if complex {
            let oracle_im = p.oracle.as_ref().map(|o| o[c].im);
            rows.push((format!("im{c}"), est.im, p.stderr[c], oracle_im));
        }
    }
    rows
}

/// Emit the convergence report: the per-point file, the log-log plot data
/// and the metadata sidecar. Returns the written paths.
pub fn emit_convergence(
    report: &ConvergenceReport,
    format: OutFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let main_path = dir.join(format!("convergence.{}", format.extension()));
    let mut main = String::new();
    match format {
        OutFormat::Csv => {
            main.push_str(&format!(
                "N,mesh,{},component,estimate,stderr,oracle,abs_error,rejected\n",
                coord_headers(report.coords)
            ));
            for p in &report.points {
                for (label, est, se, oracle) in component_rows(p, report.complex) {
                    let (o_str, err_str) = match oracle {
                        Some(o) => (format!("{o}"), format!("{}", (est - o).abs())),
                        None => (String::new(), String::new()),
                    };
                    main.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        p.n,
                        p.mesh,
                        coord_values(&p.x, report.coords),
                        label,
                        est,
                        se,
                        o_str,
                        err_str,
                        p.rejected
                    ));
                }
            }
        }
        OutFormat::JsonLines => {
            for p in &report.points {
                for (label, est, se, oracle) in component_rows(p, report.complex) {
                    let row = serde_json::json!({
                        "N": p.n,
                        "mesh": p.mesh,
                        "x": (0..report.coords).map(|i| p.x[i]).collect::<Vec<f64>>(),
                        "component": label,
                        "estimate": est,
                        "stderr": se,
                        "oracle": oracle,
                        "abs_error": oracle.map(|o| (est - o).abs()),
                        "rejected": p.rejected,
                    });
                    main.push_str(&row.to_string());
                    main.push('\n');
                }
            }
        }
    }
    write_file(&main_path, &main)?;
    written.push(main_path);

    let plot_path = dir.join("convergence_plot.csv");
    let mut plot = String::from(
        "N,mesh,log10_mesh,sup_error,log10_sup_error,l2_error,log10_l2_error,max_stderr,rejected\n",
    );
    for l in &report.levels {
        let fmt_opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        let fmt_log = |v: Option<f64>| {
            v.and_then(|v| (v > 0.0).then(|| format!("{}", v.log10()))).unwrap_or_default()
        };
        plot.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            l.n,
            l.mesh,
            l.mesh.log10(),
            fmt_opt(l.sup_error),
            fmt_log(l.sup_error),
            fmt_opt(l.l2_error),
            fmt_log(l.l2_error),
            l.max_stderr,
            l.rejected
        ));
    }
    write_file(&plot_path, &plot)?;
    written.push(plot_path);

    let meta_path = dir.join("metadata.json");
    let meta = serde_json::to_string_pretty(&report.metadata)
        .map_err(|e| Error::Config(e.to_string()))?;
    write_file(&meta_path, &meta)?;
    written.push(meta_path);

    Ok(written)
}

/// Emit single-partition estimates (or oracle evaluations) in the estimate
/// schema `x…,component,estimate,stderr,samples,rejected`.
pub fn emit_estimates(
    points: &[PointEstimate],
    complex: bool,
    coords: usize,
    format: OutFormat,
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    match format {
        OutFormat::Csv => {
            out.push_str(&format!(
                "{},component,estimate,stderr,samples,rejected\n",
                coord_headers(coords)
            ));
            for p in points {
                for (label, est, se, _) in component_rows(p, complex) {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        coord_values(&p.x, coords),
                        label,
                        est,
                        se,
                        p.samples,
                        p.rejected
                    ));
                }
            }
        }
        OutFormat::JsonLines => {
            for p in points {
                for (label, est, se, _) in component_rows(p, complex) {
                    let row = serde_json::json!({
                        "x": (0..coords).map(|i| p.x[i]).collect::<Vec<f64>>(),
                        "component": label,
                        "estimate": est,
                        "stderr": se,
                        "samples": p.samples,
                        "rejected": p.rejected,
                    });
                    out.push_str(&row.to_string());
                    out.push('\n');
                }
            }
        }
    }
    write_file(path, &out)
}

/// Emit a traced path as `s,x…,v…,event_flag` rows, with one row exactly at
/// each reflection time.
pub fn emit_trace(
    path: &crate::billiard::ReflectedPath,
    coords: usize,
    sample_points: usize,
    format: OutFormat,
    out_path: &Path,
) -> Result<()> {
    let total: f64 = path.total_time.max(f64::MIN_POSITIVE);
    struct Row {
        s: f64,
        x: V3,
        v: V3,
        flag: u8,
    }
    let mut rows = Vec::new();
    let mut clock = 0.0;
    let mut events = path.events.iter().peekable();
    for seg in &path.segments {
        while let Some(ev) = events.peek() {
            if ev.time <= clock {
                rows.push(Row { s: ev.time, x: ev.point, v: ev.outgoing, flag: 1 });
                events.next();
            } else {
                break;
            }
        }
        let count = ((sample_points as f64) * seg.duration / total).ceil().max(1.0) as usize;
        for i in 0..count {
            let s = seg.duration * i as f64 / count as f64;
            rows.push(Row {
                s: clock + s,
                x: seg.start.position + s * seg.start.velocity,
                v: seg.start.velocity,
                flag: 0,
            });
        }
        clock += seg.duration;
    }
    for ev in events {
        rows.push(Row { s: ev.time, x: ev.point, v: ev.outgoing, flag: 1 });
    }
    rows.push(Row { s: path.total_time, x: path.end.position, v: path.end.velocity, flag: 0 });

    let mut out = String::new();
    match format {
        OutFormat::Csv => {
            let vh = (0..coords).map(|i| format!("v{i}")).collect::<Vec<_>>().join(",");
            out.push_str(&format!("s,{},{},event_flag\n", coord_headers(coords), vh));
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.s,
                    coord_values(&r.x, coords),
                    coord_values(&r.v, coords),
                    r.flag
                ));
            }
        }
        OutFormat::JsonLines => {
            for r in rows {
                let row = serde_json::json!({
                    "s": r.s,
                    "x": (0..coords).map(|i| r.x[i]).collect::<Vec<f64>>(),
                    "v": (0..coords).map(|i| r.v[i]).collect::<Vec<f64>>(),
                    "event_flag": r.flag,
                });
                out.push_str(&row.to_string());
                out.push('\n');
            }
        }
    }
    write_file(out_path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_gives_header_only() {
        let report = ConvergenceReport {
            points: vec![],
            levels: vec![],
            metadata: ReportMetadata {
                seed: 1,
                config_hash: "x".into(),
                crate_version: "0".into(),
                conventions: conventions_string(),
                oracle: "spectral".into(),
            },
            complex: false,
            coords: 1,
        };
        let dir = std::env::temp_dir().join("heatpath-test-empty-grid");
        let files = emit_convergence(&report, OutFormat::Csv, &dir).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text, "N,mesh,x0,component,estimate,stderr,oracle,abs_error,rejected\n");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn one_point_one_level_gives_one_row() {
        let p = PointEstimate {
            n: 2,
            mesh: 0.125,
            x: V3::new(0.5, 0.0, 0.0),
            estimate: vec![Complex64::new(0.25, 0.0)],
            stderr: vec![0.01],
            oracle: Some(vec![Complex64::new(0.26, 0.0)]),
            samples: 100,
            rejected: 0,
            max_weight_norm: 1.0,
        };
        let report = ConvergenceReport {
            points: vec![p],
            levels: vec![LevelSummary {
                n: 2,
                mesh: 0.125,
                sup_error: Some(0.01),
                l2_error: Some(0.01),
                max_stderr: 0.01,
                rejected: 0,
            }],
            metadata: ReportMetadata {
                seed: 1,
                config_hash: "x".into(),
                crate_version: "0".into(),
                conventions: conventions_string(),
                oracle: "spectral".into(),
            },
            complex: false,
            coords: 1,
        };
        let dir = std::env::temp_dir().join("heatpath-test-one-row");
        let files = emit_convergence(&report, OutFormat::Csv, &dir).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("2,0.125,0.5,re0,0.25,0.01,0.26,"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
