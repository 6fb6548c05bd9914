//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with its measured figures. Tests serialize on a mutex so the runtime
//! budgets are measured honestly.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use heatpath::bundle::{BoundaryOperator, BundleSpec};
use heatpath::geometry::{GeometryModel, V3};
use heatpath::harness::{
    self, emit_convergence, parse_config, run_convergence, OutFormat, RunConfig,
};
use heatpath::oracle::{image_kernel_apply, ImageBc};
use heatpath::semigroup::{
    estimate_slice, generator_probe, quadrature_step_1d, EstimateOptions, FieldSection,
    HeatProblem, Partition, SectionKind,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, passed: bool, elapsed: Duration, details: &str) {
    println!(
        "criterion {criterion}: {} ({:.1}s) {details}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(passed, "criterion {criterion} failed: {details}");
}

fn v1(x: f64) -> V3 {
    V3::new(x, 0.0, 0.0)
}

const PI: f64 = std::f64::consts::PI;

fn interval_dirichlet_sine() -> HeatProblem {
    HeatProblem {
        geometry: GeometryModel::interval(0.0, PI).unwrap(),
        bundle: BundleSpec::trivial_scalar(),
        boundary: BoundaryOperator::dirichlet(1),
        section: FieldSection::new(SectionKind::SineMode { mode: 1 }),
    }
}

fn config_criterion_1(dir: &str) -> RunConfig {
    parse_config(&format!(
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
partitions = [1, 2, 4, 8]
samples = 200000
seed = 42

[grid]
kind = "uniform"
count = 9

[output]
dir = "{dir}"
format = "csv"
"#
    ))
    .unwrap()
}

fn config_criterion_4(dir: &str) -> RunConfig {
    parse_config(&format!(
        r#"
[geometry]
kind = "interval"
a = 0.0
b = 3.141592653589793

[bundle]
rank = 1
scalar = "real"
connection = "zero"
potential = "cosine-well"
potential_amplitude = 1.0
alpha = 1.0

[boundary]
preset = "neumann"

[section]
name = "cosine-mode"
mode = 1

[run]
time = 0.25
partitions = [1, 2, 4, 8, 16]
samples = 400000
seed = 42

[grid]
kind = "uniform"
count = 9

[output]
dir = "{dir}"
format = "csv"
"#
    ))
    .unwrap()
}

/// Sup errors must decrease along the ladder up to twice the combined noise.
fn assert_decreasing_within_noise(report: &harness::ConvergenceReport, label: &str) {
    for w in report.levels.windows(2) {
        let slack = 2.0 * (w[0].max_stderr.powi(2) + w[1].max_stderr.powi(2)).sqrt();
        let (e0, e1) = (w[0].sup_error.unwrap(), w[1].sup_error.unwrap());
        assert!(
            e1 <= e0 + slack,
            "{label}: sup error rose from {e0} (N = {}) to {e1} (N = {})",
            w[0].n,
            w[1].n
        );
    }
}

#[test]
fn criterion_01_flat_exactness() {
    let _g = serial();
    let start = Instant::now();
    let cfg = config_criterion_1("unused");
    let report_data = run_convergence(&cfg).unwrap();
    let mut worst_ratio: f64 = 0.0;
    for p in &report_data.points {
        let err = p.error_norm().unwrap();
        let se = p.stderr_norm();
        worst_ratio = worst_ratio.max(err / se);
        assert!(
            err <= 4.0 * se,
            "N = {}, x = {}: error {err} exceeds 4 x stderr {se}",
            p.n,
            p.x.x
        );
    }
    let elapsed = start.elapsed();
    report(
        "1 (flat exactness, interval Dirichlet)",
        elapsed <= Duration::from_secs(30),
        elapsed,
        &format!("worst error/stderr ratio {worst_ratio:.2} over N in {{1,2,4,8}}"),
    );
}

#[test]
fn criterion_02_dirichlet_sign_weight() {
    let _g = serial();
    let start = Instant::now();
    let problem = interval_dirichlet_sine();
    let t = 0.25;
    let mut worst: f64 = 0.0;
    for i in 1..=5 {
        let x = PI * i as f64 / 6.0;
        let quad = quadrature_step_1d(&problem, &v1(x), t, 64).unwrap();
        let img = image_kernel_apply(
            &problem.geometry,
            ImageBc::Dirichlet,
            &problem.section,
            x,
            t,
            2000,
        )
        .unwrap();
        worst = worst.max((quad[0].re - img).abs());
    }
    let elapsed = start.elapsed();
    report(
        "2 (reflection-parity weight vs image kernel)",
        worst <= 1e-4 && elapsed <= Duration::from_secs(5),
        elapsed,
        &format!("max |quadrature - image kernel| = {worst:.2e} at 5 points"),
    );
}

#[test]
fn criterion_03_boundary_dirichlet_zero() {
    let _g = serial();
    let start = Instant::now();
    let problem = interval_dirichlet_sine();
    let mut exact = true;
    for (m, n) in [(1u64, 1usize), (100, 2), (10_000, 4)] {
        let partition = Partition::uniform(0.25, n).unwrap();
        let est = estimate_slice(
            &problem,
            &v1(0.0),
            &partition,
            m,
            42,
            EstimateOptions { antithetic: true },
        )
        .unwrap();
        exact = exact
            && est.value[0] == Complex64::new(0.0, 0.0)
            && (est.stderr[0] == 0.0 || m == 1);
    }
    let elapsed = start.elapsed();
    report(
        "3 (boundary-point Dirichlet zero)",
        exact && elapsed <= Duration::from_secs(5),
        elapsed,
        "antithetic estimate at x = 0 is exactly zero for M in {1, 100, 10000}",
    );
}

#[test]
fn criterion_04_chernoff_with_potential() {
    let _g = serial();
    let start = Instant::now();
    let cfg = config_criterion_4("unused");
    let report_data = run_convergence(&cfg).unwrap();
    assert_eq!(report_data.metadata.oracle, "finite-difference");
    assert_decreasing_within_noise(&report_data, "criterion 4");
    let last = report_data.levels.last().unwrap();
    let final_err = last.sup_error.unwrap();
    let bound = (0.005_f64).max(4.0 * last.max_stderr);
    let elapsed = start.elapsed();
    report(
        "4 (convergence with potential, Neumann)",
        final_err <= bound && elapsed <= Duration::from_secs(180),
        elapsed,
        &format!("final sup error {final_err:.3e} <= {bound:.3e}, ladder decreasing"),
    );
}

#[test]
fn criterion_05_sphere_band() {
    let _g = serial();
    let start = Instant::now();
    let cfg = parse_config(
        r#"
[geometry]
kind = "sphere"
radius = 1.0

[bundle]
rank = 1
scalar = "real"
connection = "zero"
potential = "zero"
alpha = 0.0

[boundary]
preset = "neumann"

[section]
name = "sphere-band"
coeffs = [0.6, 0.0, 0.8]

[run]
time = 0.2
partitions = [1, 2, 4, 8, 16]
samples = 400000
seed = 42

[grid]
kind = "uniform"
count = 8

[output]
dir = "unused"
format = "csv"
"#,
    )
    .unwrap();
    let report_data = run_convergence(&cfg).unwrap();
    assert_eq!(report_data.metadata.oracle, "spectral");
    assert_decreasing_within_noise(&report_data, "criterion 5");
    let last = report_data.levels.last().unwrap();
    let final_err = last.sup_error.unwrap();
    let sup_u = 1.0; // |(0.6, 0, 0.8)|
    let bound = 0.01 * sup_u + 4.0 * last.max_stderr;
    let elapsed = start.elapsed();
    report(
        "5 (closed curved case, sphere)",
        final_err <= bound && elapsed <= Duration::from_secs(180),
        elapsed,
        &format!("final sup error {final_err:.3e} <= {bound:.3e} vs exp(-2t) decay"),
    );
}

#[test]
fn criterion_06_circle_holonomy() {
    let _g = serial();
    let start = Instant::now();
    let problem = HeatProblem {
        geometry: GeometryModel::circle(1.0).unwrap(),
        bundle: BundleSpec {
            rank: 1,
            scalar: heatpath::bundle::FieldScalar::Complex,
            connection: heatpath::bundle::Connection::CircleHolonomy { coupling: 0.5 },
            potential: heatpath::bundle::Potential::Zero,
            alpha: 0.0,
        },
        boundary: BoundaryOperator::neumann(1),
        section: FieldSection::new(SectionKind::FourierMode { mode: 1 }),
    };
    let t = 1.0;
    let partition = Partition::uniform(t, 4).unwrap();
    let decay = (-2.25_f64).exp();
    let mut worst_ratio: f64 = 0.0;
    for i in 0..8 {
        let theta = heatpath::geometry::TAU * i as f64 / 8.0;
        let est = estimate_slice(
            &problem,
            &v1(theta),
            &partition,
            200_000,
            42,
            EstimateOptions::default(),
        )
        .unwrap();
        let oracle = Complex64::new(0.0, theta).exp() * decay;
        let err = (est.value[0] - oracle).norm();
        worst_ratio = worst_ratio.max(err / est.stderr[0]);
        assert!(
            err <= 4.0 * est.stderr[0],
            "theta = {theta}: |estimate - exp(-2.25) e^(i theta)| = {err} > 4 stderr"
        );
    }
    let elapsed = start.elapsed();
    report(
        "6 (holonomy transport on the circle)",
        elapsed <= Duration::from_secs(60),
        elapsed,
        &format!("worst error/stderr ratio {worst_ratio:.2} at 8 angles"),
    );
}

#[test]
fn criterion_07_norm_and_gronwall_bounds() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4207);
    let mut worst_weight: f64 = 0.0;
    let mut worst_estimate: f64 = 0.0;
    for i in 0..100u64 {
        let (problem, x, t) = harness::props::random_norm_bound_problem(&mut rng);
        let partition = Partition::uniform(t, 1 + (i % 3) as usize).unwrap();
        let est =
            estimate_slice(&problem, &x, &partition, 500, 4300 + i, EstimateOptions::default())
                .unwrap();
        let bound = (t * problem.bundle.alpha).exp();
        worst_weight = worst_weight.max(est.max_weight_norm / (bound * (1.0 + 1e-6)));
        let sup_u = problem.section.sup_norm();
        if sup_u > 0.0 {
            // the estimate bound allows floating-point roundoff only
            worst_estimate =
                worst_estimate.max(est.value_norm() / (bound * sup_u * (1.0 + 1e-12)));
        }
    }
    let elapsed = start.elapsed();
    report(
        "7 (norm and transport bounds)",
        worst_weight <= 1.0 && worst_estimate <= 1.0 && elapsed <= Duration::from_secs(60),
        elapsed,
        &format!(
            "100 random configs: weight-bound ratio {worst_weight:.6}, estimate-bound ratio {worst_estimate:.6}"
        ),
    );
}

#[test]
fn criterion_08_generator_probe() {
    let _g = serial();
    let start = Instant::now();
    let problem = interval_dirichlet_sine();
    let probe = generator_probe(&problem, &v1(1.2), &[0.04, 0.02, 0.01], 400_000, 42).unwrap();
    let expected = -(1.2_f64).sin(); // -0.9320
    let err = (probe.value[0].re - expected).abs();
    let tol = expected.abs() * 0.02 + 4.0 * probe.stderr[0];
    let elapsed = start.elapsed();
    report(
        "8 (infinitesimal generator probe)",
        err <= tol && elapsed <= Duration::from_secs(60),
        elapsed,
        &format!(
            "extrapolated quotient {:.4} vs {expected:.4}, |error| {err:.3e} <= {tol:.3e}",
            probe.value[0].re
        ),
    );
}

#[test]
fn criterion_09_billiard_dynamics_suite() {
    let _g = serial();
    let start = Instant::now();
    let results = harness::billiard_suite();
    let mut all = true;
    let mut lines = String::new();
    for r in &results {
        all = all && r.passed;
        lines.push_str(&format!("\n    {}: measured {:.3e}, bound {:.3e}", r.name, r.measured, r.bound));
    }
    let elapsed = start.elapsed();
    report(
        "9 (billiard dynamics suite)",
        all && elapsed <= Duration::from_secs(60),
        elapsed,
        &lines,
    );
}

#[test]
fn criterion_10_reproducibility() {
    let _g = serial();
    let start = Instant::now();
    let base = std::env::temp_dir().join("heatpath-acceptance-repro");
    let run_to_bytes = |cfg: &RunConfig, threads: usize, tag: &str| -> Vec<String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let report = pool.install(|| run_convergence(cfg)).unwrap();
        let dir = base.join(format!("{tag}-{threads}"));
        let files = emit_convergence(&report, OutFormat::Csv, &dir).unwrap();
        files
            .iter()
            .filter(|f| f.extension().is_some_and(|e| e == "csv"))
            .map(|f| std::fs::read_to_string(f).unwrap())
            .collect()
    };
    let mut identical = true;
    for (tag, cfg) in [
        ("c1", config_criterion_1("unused")),
        ("c4", config_criterion_4("unused")),
    ] {
        let one = run_to_bytes(&cfg, 1, tag);
        let eight = run_to_bytes(&cfg, 8, tag);
        identical = identical && one == eight;
    }
    std::fs::remove_dir_all(&base).ok();
    let elapsed = start.elapsed();
    report(
        "10 (byte-identical reruns across worker counts)",
        identical,
        elapsed,
        "criteria 1 and 4 CSVs at 1 vs 8 workers",
    );
}
