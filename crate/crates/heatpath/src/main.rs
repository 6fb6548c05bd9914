//! Command-line driver: billiard traces, sliced heat-operator estimates,
//! convergence sweeps, oracle evaluations and the property suite.
//!
//! Exit codes: 0 success, 2 validation error, 3 property-suite failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heatpath::billiard::trace_reflected;
use heatpath::geometry::V3;
use heatpath::harness::{
    self, config::chart_coords, emit_convergence, emit_estimates, emit_trace, OutFormat, RunConfig,
};
use heatpath::{Error, Result};

#[derive(Parser)]
#[command(
    name = "heatpath",
    version,
    about = "Sliced heat-operator estimation along reflected geodesics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (strict TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for estimation (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output format: csv | jsonl; overrides the configured one.
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Billiard dynamics.
    Billiard {
        #[command(subcommand)]
        cmd: BilliardCmd,
    },
    /// Sliced heat-operator estimation.
    Heat {
        #[command(subcommand)]
        cmd: HeatCmd,
    },
    /// Reference solutions.
    Oracle {
        #[command(subcommand)]
        cmd: OracleCmd,
    },
    /// Invariant checks.
    Props {
        #[command(subcommand)]
        cmd: PropsCmd,
    },
}

#[derive(Subcommand)]
enum BilliardCmd {
    /// Trace one reflected geodesic from the `[trace]` table and emit it.
    Trace,
}

#[derive(Subcommand)]
enum HeatCmd {
    /// Single-interval estimate (N = 1) on the grid.
    Step,
    /// Estimate with the finest configured partition on the grid.
    Slices,
    /// Full partition ladder against the oracle.
    Converge,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Evaluate the oracle on the grid in the estimate schema.
    Eval,
}

#[derive(Subcommand)]
enum PropsCmd {
    /// Run the full property suite.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: could not configure {workers} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = harness::load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(format) = &cli.format {
        cfg.output.format = format.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.output.dir)
}

fn ensure_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out_dir(cfg)).map_err(|source| Error::Io {
        path: cfg.output.dir.clone(),
        source,
    })
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Billiard { cmd: BilliardCmd::Trace } => {
            let cfg = load(cli)?;
            let trace_cfg = cfg
                .trace
                .clone()
                .ok_or_else(|| Error::Config("a [trace] table is required".into()))?;
            let g = cfg.build_geometry()?;
            let mut pos = V3::zeros();
            for (i, c) in trace_cfg.position.iter().take(3).enumerate() {
                pos[i] = *c;
            }
            let mut vel = V3::zeros();
            for (i, c) in trace_cfg.velocity.iter().take(3).enumerate() {
                vel[i] = *c;
            }
            let cap = trace_cfg.max_reflections.unwrap_or_else(|| {
                heatpath::billiard::default_reflection_cap(trace_cfg.time, vel.norm())
            });
            let path = trace_reflected(&g, &pos, &vel, trace_cfg.time, cap)?;
            let format = OutFormat::from_name(&cfg.output.format)?;
            ensure_dir(&cfg)?;
            let out = out_dir(&cfg).join(format!("trace.{}", format.extension()));
            let samples = trace_cfg.sample_points.unwrap_or(256);
            emit_trace(&path, chart_coords(&g), samples, format, &out)?;
            println!(
                "traced {:?} path with {} reflections -> {}",
                path.status,
                path.reflections(),
                out.display()
            );
            Ok(0)
        }
        Command::Heat { cmd } => {
            let cfg = load(cli)?;
            let format = OutFormat::from_name(&cfg.output.format)?;
            let problem = cfg.build_problem()?;
            let coords = chart_coords(&problem.geometry);
            let complex = problem.bundle.scalar == heatpath::bundle::FieldScalar::Complex;
            match cmd {
                HeatCmd::Step | HeatCmd::Slices => {
                    let n = match cmd {
                        HeatCmd::Step => 1,
                        _ => *cfg.run.partitions.last().unwrap(),
                    };
                    let rows = harness::run_estimates(&cfg, n)?;
                    ensure_dir(&cfg)?;
                    let out = out_dir(&cfg).join(format!("estimate.{}", format.extension()));
                    emit_estimates(&rows, complex, coords, format, &out)?;
                    println!(
                        "estimated {} grid points at N = {n} -> {}",
                        rows.len(),
                        out.display()
                    );
                }
                HeatCmd::Converge => {
                    let report = harness::run_convergence(&cfg)?;
                    let files = emit_convergence(&report, format, &out_dir(&cfg))?;
                    for l in &report.levels {
                        println!(
                            "N = {:>4}  mesh = {:<12}  sup_error = {}  l2_error = {}",
                            l.n,
                            l.mesh,
                            l.sup_error.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into()),
                            l.l2_error.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into()),
                        );
                    }
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                }
            }
            Ok(0)
        }
        Command::Oracle { cmd: OracleCmd::Eval } => {
            let cfg = load(cli)?;
            let format = OutFormat::from_name(&cfg.output.format)?;
            let problem = cfg.build_problem()?;
            let rows = harness::run_oracle_eval(&cfg)?;
            ensure_dir(&cfg)?;
            let out = out_dir(&cfg).join(format!("oracle.{}", format.extension()));
            emit_estimates(
                &rows,
                problem.bundle.scalar == heatpath::bundle::FieldScalar::Complex,
                chart_coords(&problem.geometry),
                format,
                &out,
            )?;
            println!("evaluated oracle at {} grid points -> {}", rows.len(), out.display());
            Ok(0)
        }
        Command::Props { cmd: PropsCmd::Run } => {
            let report = harness::run_property_suite()?;
            for line in report.lines() {
                println!("{line}");
            }
            if cli.config.is_some() {
                let cfg = load(cli)?;
                let format = OutFormat::from_name(&cfg.output.format)?;
                ensure_dir(&cfg)?;
                let out = out_dir(&cfg).join(format!("props.{}", format.extension()));
                let mut text = String::new();
                match format {
                    OutFormat::Csv => {
                        text.push_str("name,passed,measured,bound,details\n");
                        for r in &report.results {
                            text.push_str(&format!(
                                "{},{},{},{},\"{}\"\n",
                                r.name, r.passed, r.measured, r.bound, r.details
                            ));
                        }
                    }
                    OutFormat::JsonLines => {
                        for r in &report.results {
                            text.push_str(
                                &serde_json::json!({
                                    "name": r.name,
                                    "passed": r.passed,
                                    "measured": r.measured,
                                    "bound": r.bound,
                                    "details": r.details,
                                })
                                .to_string(),
                            );
                            text.push('\n');
                        }
                    }
                }
                std::fs::write(&out, text).map_err(|source| Error::Io {
                    path: out.display().to_string(),
                    source,
                })?;
                println!("wrote {}", out.display());
            }
            if report.all_passed() {
                Ok(0)
            } else {
                Ok(3)
            }
        }
    }
}
