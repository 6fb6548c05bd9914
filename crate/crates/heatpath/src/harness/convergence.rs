//! Convergence sweeps: estimates over a partition ladder against the best
//! available oracle, with per-level sup and grid-L² errors.

use num_complex::Complex64;

use super::config::{chart_coords, config_hash, RunConfig};
use super::report::{
    conventions_string, ConvergenceReport, LevelSummary, PointEstimate, ReportMetadata,
};
use crate::bundle::FieldScalar;
use crate::oracle::{reference_evolve, OracleKind};
use crate::semigroup::{estimate_slice, EstimateOptions, FieldSection, HeatProblem, Partition};
use crate::{Error, Result};

/// Evaluate an evolved oracle section at a point.
fn oracle_values(
    problem: &HeatProblem,
    evolved: &FieldSection,
    x: &crate::geometry::V3,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); problem.bundle.rank];
    evolved.eval_into(&problem.geometry, x, &mut out);
    out
}

/// Run the configured partition ladder and assemble the report.
///
/// Configurations without an oracle are accepted only with the descriptive
/// flag; their oracle and error columns stay blank.
pub fn run_convergence(cfg: &RunConfig) -> Result<ConvergenceReport> {
    let problem = cfg.build_problem()?;
    let grid = cfg.grid_points(&problem.geometry)?;
    let t = cfg.run.time;

    let oracle = match reference_evolve(&problem, t, cfg.run.fd_grid) {
        Ok((section, kind)) => Some((section, kind)),
        Err(Error::OracleMissing(reason)) => {
            if cfg.run.descriptive {
                None
            } else {
                return Err(Error::OracleMissing(format!(
                    "{reason}; set run.descriptive = true to run without one"
                )));
            }
        }
        Err(e) => return Err(e),
    };

    let opts = EstimateOptions { antithetic: cfg.run.antithetic };
    let mut points = Vec::new();
    let mut levels = Vec::new();
    for &n in &cfg.run.partitions {
        let partition = Partition::uniform(t, n)?;
        let mesh = partition.mesh();
        let mut sup_error: Option<f64> = None;
        let mut sq_sum = 0.0;
        let mut max_stderr: f64 = 0.0;
        let mut rejected_total = 0u64;
        for x in &grid {
            let est = estimate_slice(&problem, x, &partition, cfg.run.samples, cfg.run.seed, opts)?;
            let oracle_here = oracle.as_ref().map(|(sec, _)| oracle_values(&problem, sec, x));
            let point = PointEstimate {
                n,
                mesh,
                x: *x,
                estimate: est.value.clone(),
                stderr: est.stderr.clone(),
                oracle: oracle_here,
                samples: est.samples_used,
                rejected: est.rejected,
                max_weight_norm: est.max_weight_norm,
            };
            if let Some(err) = point.error_norm() {
                sup_error = Some(sup_error.unwrap_or(0.0).max(err));
                sq_sum += err * err;
            }
            max_stderr = max_stderr.max(point.stderr_norm());
            rejected_total += est.rejected;
            points.push(point);
        }
        levels.push(LevelSummary {
            n,
            mesh,
            sup_error,
            l2_error: sup_error
                .is_some()
                .then(|| (sq_sum / grid.len().max(1) as f64).sqrt()),
            max_stderr,
            rejected: rejected_total,
        });
    }

    Ok(ConvergenceReport {
        points,
        levels,
        metadata: ReportMetadata {
            seed: cfg.run.seed,
            config_hash: config_hash(cfg)?,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            conventions: conventions_string(),
            oracle: match oracle.map(|(_, k)| k) {
                Some(OracleKind::Spectral) => "spectral".into(),
                Some(OracleKind::FiniteDifference) => "finite-difference".into(),
                None => "none (descriptive)".into(),
            },
        },
        complex: problem.bundle.scalar == FieldScalar::Complex,
        coords: chart_coords(&problem.geometry),
    })
}

/// Estimate on the grid for a single partition (the `heat step` and
/// `heat slices` entry point).
pub fn run_estimates(cfg: &RunConfig, n: usize) -> Result<Vec<PointEstimate>> {
    let problem = cfg.build_problem()?;
    let grid = cfg.grid_points(&problem.geometry)?;
    let partition = Partition::uniform(cfg.run.time, n)?;
    let opts = EstimateOptions { antithetic: cfg.run.antithetic };
    let mut rows = Vec::new();
    for x in &grid {
        let est = estimate_slice(&problem, x, &partition, cfg.run.samples, cfg.run.seed, opts)?;
        rows.push(PointEstimate {
            n,
            mesh: partition.mesh(),
            x: *x,
            estimate: est.value,
            stderr: est.stderr,
            oracle: None,
            samples: est.samples_used,
            rejected: est.rejected,
            max_weight_norm: est.max_weight_norm,
        });
    }
    Ok(rows)
}

/// Oracle evaluations on the grid, in the estimate schema (the
/// `oracle eval` entry point).
pub fn run_oracle_eval(cfg: &RunConfig) -> Result<Vec<PointEstimate>> {
    let problem = cfg.build_problem()?;
    let grid = cfg.grid_points(&problem.geometry)?;
    let (section, _) = reference_evolve(&problem, cfg.run.time, cfg.run.fd_grid)?;
    Ok(grid
        .iter()
        .map(|x| PointEstimate {
            n: 0,
            mesh: 0.0,
            x: *x,
            estimate: oracle_values(&problem, &section, x),
            stderr: vec![0.0; problem.bundle.rank],
            oracle: None,
            samples: 0,
            rejected: 0,
            max_weight_norm: 0.0,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn small_config() -> RunConfig {
        parse_config(
            r#"
[geometry]
kind = "interval"
a = 0.0
b = 3.141592653589793

[bundle]
rank = 1
scalar = "real"
connection = "zero"
potential = "zero"
alpha = 0.0

[boundary]
preset = "dirichlet"

[section]
name = "sine-mode"
mode = 1

[run]
time = 0.25
partitions = [1, 2]
samples = 4000
seed = 7

[grid]
kind = "uniform"
count = 3

[output]
dir = "out"
format = "csv"
"#,
        )
        .unwrap()
    }

    #[test]
    fn convergence_run_produces_errors_within_noise() {
        let report = run_convergence(&small_config()).unwrap();
        assert_eq!(report.points.len(), 6);
        assert_eq!(report.levels.len(), 2);
        assert_eq!(report.metadata.oracle, "spectral");
        for p in &report.points {
            let err = p.error_norm().unwrap();
            assert!(err <= 4.0 * p.stderr_norm() + 1e-12, "err {err}");
        }
        for l in &report.levels {
            assert!(l.sup_error.unwrap() >= 0.0);
            assert!(l.l2_error.unwrap() <= l.sup_error.unwrap() + 1e-15);
        }
    }

    #[test]
    fn descriptive_flag_gates_missing_oracles() {
        let mut cfg = small_config();
        cfg.geometry.kind = "disk".into();
        cfg.geometry.a = None;
        cfg.geometry.b = None;
        cfg.geometry.radius = Some(1.0);
        cfg.section.name = "constant".into();
        cfg.section.mode = None;
        cfg.section.values = Some(vec![1.0]);
        assert!(matches!(run_convergence(&cfg), Err(Error::OracleMissing(_))));
        cfg.run.descriptive = true;
        let report = run_convergence(&cfg).unwrap();
        assert!(report.points[0].oracle.is_none());
        assert_eq!(report.metadata.oracle, "none (descriptive)");
    }
}
