//! The property suite: module-level invariants executed with fixed seeds,
//! each reporting a measured margin against its bound. `props run` executes
//! the whole catalogue; the billiard subset also backs the dynamics
//! acceptance check.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::billiard::{
    anti_development, billiard_flow, path_energy, polyline_deviation, trace_reflected,
};
use crate::bundle::{
    operator_norm, transport_path, transport_segment_matrix, BoundaryOperator, BundleSpec,
    CMatrix, CVector, Connection, FieldScalar, Potential,
};
use crate::geometry::{GeometryModel, LevelSet, ModelKind, PhasePoint, PointClass, V3};
use crate::oracle::{image_kernel, ImageBc, ImageProblem, SpectralModel, SpectralProblem};
use crate::semigroup::{
    estimate_slice, EstimateOptions, FieldSection, HeatProblem, Partition, SectionKind,
};
use crate::Result;

/// Outcome of one executed invariant.
#[derive(Clone, Debug)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    /// The measured figure (defect, ratio or statistic, per the property).
    pub measured: f64,
    /// The bound it must stay within.
    pub bound: f64,
    pub details: String,
}

impl PropertyResult {
    fn from_margin(name: &'static str, measured: f64, bound: f64, details: String) -> Self {
        PropertyResult { name, passed: measured <= bound, measured, bound, details }
    }
}

#[derive(Clone, Debug)]
pub struct PropertyReport {
    pub results: Vec<PropertyResult>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.results
            .iter()
            .map(|r| {
                format!(
                    "{}: {} (measured {:.3e}, bound {:.3e}) {}",
                    r.name,
                    if r.passed { "pass" } else { "FAIL" },
                    r.measured,
                    r.bound,
                    r.details
                )
            })
            .collect()
    }
}

fn v1(x: f64) -> V3 {
    V3::new(x, 0.0, 0.0)
}

fn boundary_models() -> Vec<GeometryModel> {
    vec![
        GeometryModel::interval(0.0, 1.0).unwrap(),
        GeometryModel::disk(1.0).unwrap(),
        GeometryModel::implicit_planar(LevelSet::Ellipse { rx: 1.1, ry: 0.7 }).unwrap(),
    ]
}

fn all_models() -> Vec<GeometryModel> {
    vec![
        GeometryModel::interval(0.0, 1.0).unwrap(),
        GeometryModel::disk(1.0).unwrap(),
        GeometryModel::implicit_planar(LevelSet::Ellipse { rx: 1.1, ry: 0.7 }).unwrap(),
        GeometryModel::circle(1.0).unwrap(),
        GeometryModel::flat_torus(1.0, 1.3).unwrap(),
        GeometryModel::sphere(1.0).unwrap(),
    ]
}

/// A uniformly random interior point of the model.
fn random_interior(g: &GeometryModel, rng: &mut ChaCha8Rng) -> V3 {
    match g.kind() {
        ModelKind::Interval { a, b } => v1(a + (b - a) * (0.01 + 0.98 * rng.gen::<f64>())),
        ModelKind::Circle { .. } => v1(crate::geometry::TAU * rng.gen::<f64>()),
        ModelKind::Disk { radius } => {
            let r = radius * (rng.gen::<f64>()).sqrt() * 0.999;
            let th = crate::geometry::TAU * rng.gen::<f64>();
            V3::new(r * th.cos(), r * th.sin(), 0.0)
        }
        ModelKind::ImplicitPlanar { level } => loop {
            let (x0, x1, y0, y1) = level.bounding_box();
            let p = V3::new(
                x0 + (x1 - x0) * rng.gen::<f64>(),
                y0 + (y1 - y0) * rng.gen::<f64>(),
                0.0,
            );
            if g.classify_point(&p).unwrap() == PointClass::Interior {
                break p;
            }
        },
        ModelKind::FlatTorus { l1, l2 } => {
            V3::new(l1 * rng.gen::<f64>(), l2 * rng.gen::<f64>(), 0.0)
        }
        ModelKind::Sphere { radius } => {
            loop {
                let p = V3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                );
                if p.norm() > 1e-3 {
                    break p.normalize() * *radius;
                }
            }
        }
    }
}

/// A random tangent vector at `x` with components of the given scale.
fn random_velocity(g: &GeometryModel, x: &V3, rng: &mut ChaCha8Rng, scale: f64) -> V3 {
    let basis = g.tangent_basis(x);
    let mut v = V3::zeros();
    for b in basis.iter().take(g.dim()) {
        v += (rng.gen::<f64>() - 0.5) * 2.0 * scale * b;
    }
    v
}

// ---- geometry ----------------------------------------------------------

fn prop_reflection_involution() -> PropertyResult {
    let mut worst: f64 = 0.0;
    for g in boundary_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..1000 {
            let x = g.boundary_point(rng.gen()).unwrap();
            let w = V3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, 0.0) * 4.0;
            let r = g.reflect(&x, &w).unwrap();
            let rr = g.reflect(&x, &r).unwrap();
            worst = worst.max((rr - w).norm()).max((r.norm() - w.norm()).abs());
        }
    }
    PropertyResult::from_margin(
        "geometry-reflection-involution",
        worst,
        1e-12,
        "1000 boundary samples per boundary model".into(),
    )
}

fn prop_hit_consistency() -> PropertyResult {
    let mut worst: f64 = 0.0;
    let mut short_violations = 0u32;
    for g in boundary_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let mut checked = 0;
        while checked < 300 {
            let x = random_interior(&g, &mut rng);
            let dir = random_velocity(&g, &x, &mut rng, 2.0);
            if dir.norm() < 0.3 {
                continue;
            }
            let p = PhasePoint::new(x, dir);
            if let Some(hit) = g.first_boundary_hit(&p, 20.0).unwrap() {
                let at = g.geodesic_advance(&p, hit.time).unwrap();
                let dist = boundary_distance(&g, &at.position);
                worst = worst.max(dist / g.hit_tolerance());
                let short = g.geodesic_advance(&p, hit.time * (1.0 - 1e-6)).unwrap();
                if g.classify_point(&short.position).unwrap() == PointClass::Outside {
                    short_violations += 1;
                }
                checked += 1;
            }
        }
    }
    let mut res = PropertyResult::from_margin(
        "geometry-hit-consistency",
        worst,
        1.0,
        format!("hit distance / tolerance; {short_violations} short-advance escapes"),
    );
    res.passed = res.passed && short_violations == 0;
    res
}

fn boundary_distance(g: &GeometryModel, x: &V3) -> f64 {
    match g.kind() {
        ModelKind::Interval { a, b } => (x.x - a).abs().min((b - x.x).abs()),
        ModelKind::Disk { radius } => (x.norm() - radius).abs(),
        ModelKind::ImplicitPlanar { level } => {
            let f = level.value(x.x, x.y);
            let (gx, gy) = level.gradient(x.x, x.y);
            f.abs() / (gx * gx + gy * gy).sqrt().max(1e-12)
        }
        _ => f64::INFINITY,
    }
}

fn prop_sphere_drift() -> PropertyResult {
    let g = GeometryModel::sphere(1.0).unwrap();
    let mut p = PhasePoint::new(
        V3::new(0.3, -0.5, 0.81).normalize(),
        V3::new(0.5, 0.3, -(0.3 * 0.5 + 0.3 * (-0.5)) / 0.81),
    );
    // project the start velocity exactly
    p.velocity -= p.position * p.velocity.dot(&p.position);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        p = g.geodesic_advance(&p, 0.0173).unwrap();
        let r_err = (p.position.norm() - 1.0).abs();
        let tan_err = p.position.dot(&p.velocity).abs() / p.speed();
        worst = worst.max(r_err).max(tan_err);
    }
    PropertyResult::from_margin(
        "geometry-sphere-advance-drift",
        worst,
        1e-10,
        "radius and tangency drift over 10^4 composed steps".into(),
    )
}

// ---- billiard ----------------------------------------------------------

fn per_model_path_count(g: &GeometryModel) -> u64 {
    // implicit hit detection marches in tolerance-scaled substeps; keep its
    // share of the budget proportionate
    match g.kind() {
        ModelKind::ImplicitPlanar { .. } => 2_000,
        _ => 10_000,
    }
}

fn prop_speed_preservation() -> PropertyResult {
    let mut worst: f64 = 0.0;
    for g in all_models() {
        let count = per_model_path_count(&g);
        let m = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(200);
                rng.set_stream(i);
                let x = random_interior(&g, &mut rng);
                let vel = random_velocity(&g, &x, &mut rng, 2.0);
                if vel.norm() < 0.05 {
                    return 0.0;
                }
                let p = trace_reflected(&g, &x, &vel, 1.0, 1_000_000).unwrap();
                if !p.is_ok() {
                    return 0.0;
                }
                (p.end.speed() - vel.norm()).abs() / vel.norm()
            })
            .reduce(|| 0.0, f64::max);
        worst = worst.max(m);
    }
    PropertyResult::from_margin(
        "billiard-speed-preservation",
        worst,
        1e-10,
        "relative speed drift over random paths, all models".into(),
    )
}

fn prop_flow_inversion() -> PropertyResult {
    let mut worst: f64 = 0.0;
    for g in all_models() {
        let count = per_model_path_count(&g) / 2;
        let m = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(210);
                rng.set_stream(i);
                let x = random_interior(&g, &mut rng);
                let vel = random_velocity(&g, &x, &mut rng, 2.0);
                if vel.norm() < 0.05 {
                    return 0.0;
                }
                let p = PhasePoint::new(x, vel);
                let fwd = billiard_flow(&g, &p, 0.8, 1_000_000).unwrap();
                if !fwd.in_domain {
                    return 0.0;
                }
                let back = billiard_flow(&g, &fwd.final_state, -0.8, 1_000_000).unwrap();
                if !back.in_domain {
                    return 0.0;
                }
                (back.final_state.position - p.position)
                    .norm()
                    .max((back.final_state.velocity - p.velocity).norm())
            })
            .reduce(|| 0.0, f64::max);
        worst = worst.max(m);
    }
    PropertyResult::from_margin(
        "billiard-flow-inversion",
        worst,
        1e-9,
        "phase-space distance after flowing forward then backward".into(),
    )
}

fn prop_rescaling() -> PropertyResult {
    let mut worst: f64 = 0.0;
    for g in all_models() {
        let count = per_model_path_count(&g) / 2;
        let m = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(220);
                rng.set_stream(i);
                let x = random_interior(&g, &mut rng);
                let vel = random_velocity(&g, &x, &mut rng, 2.0);
                let speed = vel.norm();
                if speed < 0.05 {
                    return 0.0;
                }
                let t = 0.7;
                let full = billiard_flow(&g, &PhasePoint::new(x, vel), t, 1_000_000).unwrap();
                let unit = billiard_flow(
                    &g,
                    &PhasePoint::new(x, vel / speed),
                    t * speed,
                    1_000_000,
                )
                .unwrap();
                if !(full.in_domain && unit.in_domain) {
                    return 0.0;
                }
                (full.final_state.position - unit.final_state.position)
                    .norm()
                    .max((full.final_state.velocity - unit.final_state.velocity * speed).norm())
            })
            .reduce(|| 0.0, f64::max);
        worst = worst.max(m);
    }
    PropertyResult::from_margin(
        "billiard-rescaling-identity",
        worst,
        1e-9,
        "unit-speed flow rescaled against the direct flow".into(),
    )
}

fn prop_measure_preservation() -> PropertyResult {
    // uniform positions on the disk, area-uniform velocities with speeds in
    // [0.5, 1.5]; the flow must preserve the position marginal
    let g = GeometryModel::disk(1.0).unwrap();
    let samples = 100_000u64;
    let bins = 10usize;
    let mut before = vec![0u64; bins * bins];
    let mut after = vec![0u64; bins * bins];
    let bin_of = |p: &V3| {
        let ix = (((p.x + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        let iy = (((p.y + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        iy * bins + ix
    };
    let mut rng = ChaCha8Rng::seed_from_u64(230);
    for _ in 0..samples {
        let x = random_interior(&g, &mut rng);
        let speed = (0.25 + rng.gen::<f64>() * (2.25 - 0.25)).sqrt();
        let th = crate::geometry::TAU * rng.gen::<f64>();
        let vel = V3::new(speed * th.cos(), speed * th.sin(), 0.0);
        before[bin_of(&x)] += 1;
        let flow = billiard_flow(&g, &PhasePoint::new(x, vel), 1.0, 1_000_000).unwrap();
        after[bin_of(&flow.final_state.position)] += 1;
    }
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    for (b, a) in before.iter().zip(&after) {
        let total = b + a;
        if total >= 10 {
            let d = *b as f64 - *a as f64;
            chi2 += d * d / total as f64;
            dof += 1;
        }
    }
    let critical = ChiSquared::new((dof.max(2) - 1) as f64).unwrap().inverse_cdf(0.999);
    PropertyResult::from_margin(
        "billiard-measure-preservation-chi2",
        chi2,
        critical,
        format!("two-sample chi-square over {dof} occupied cells at significance 0.001"),
    )
}

fn prop_anti_development() -> PropertyResult {
    let models = [
        (GeometryModel::interval(0.0, 1.0).unwrap(), 10_000u64),
        (GeometryModel::disk(1.0).unwrap(), 10_000),
        (GeometryModel::implicit_planar(LevelSet::Ellipse { rx: 1.1, ry: 0.7 }).unwrap(), 500),
        (GeometryModel::implicit_planar(LevelSet::Square { half_width: 1.0 }).unwrap(), 500),
    ];
    let mut worst: f64 = 0.0;
    for (g, count) in models {
        let m = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(240);
                rng.set_stream(i);
                let x = random_interior(&g, &mut rng);
                let vel = random_velocity(&g, &x, &mut rng, 2.0);
                if vel.norm() < 0.05 {
                    return 0.0;
                }
                let t = 1.0;
                let p = trace_reflected(&g, &x, &vel, t, 1_000_000).unwrap();
                if !p.is_ok() {
                    return 0.0;
                }
                let u = anti_development(&g, &p).unwrap();
                polyline_deviation(&u) / (vel.norm() * t)
            })
            .reduce(|| 0.0, f64::max);
        worst = worst.max(m);
    }
    PropertyResult::from_margin(
        "billiard-anti-development-straightness",
        worst,
        1e-8,
        "rollout deviation relative to |v| t on flat boundary models".into(),
    )
}

fn prop_omega_rejection_rate() -> PropertyResult {
    // Gaussian velocities with the single-step variance 2/t at t = 1
    let g = GeometryModel::disk(1.0).unwrap();
    let samples = 1_000_000u64;
    let rejected: u64 = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(250);
            rng.set_stream(i);
            let x = random_interior(&g, &mut rng);
            let vel = crate::semigroup::sample_segment_velocity(2, 1.0, &mut rng).unwrap();
            let p = trace_reflected(&g, &x, &vel, 1.0, crate::billiard::default_reflection_cap(1.0, vel.norm()))
                .unwrap();
            u64::from(!p.is_ok())
        })
        .sum();
    let fraction = rejected as f64 / samples as f64;
    PropertyResult::from_margin(
        "billiard-rejection-rate",
        fraction,
        1e-4,
        format!("{rejected} rejections among 10^6 Gaussian starts on the disk"),
    )
}

// ---- bundle ------------------------------------------------------------

/// A random bounded-potential problem on a random model with `alpha ≤ 1`,
/// `t ≤ 1`. Shared by the norm-bound properties and the acceptance suite.
pub fn random_norm_bound_problem(rng: &mut ChaCha8Rng) -> (HeatProblem, V3, f64) {
    let geometry = match rng.gen_range(0..5) {
        0 => GeometryModel::interval(0.0, std::f64::consts::PI).unwrap(),
        1 => GeometryModel::disk(1.0).unwrap(),
        2 => GeometryModel::circle(1.0).unwrap(),
        3 => GeometryModel::flat_torus(1.0, 1.3).unwrap(),
        _ => GeometryModel::sphere(1.0).unwrap(),
    };
    let rank = rng.gen_range(1..=3usize);
    let (connection, potential) = if rank == 1 {
        let potential = match rng.gen_range(0..3) {
            0 => Potential::Zero,
            1 => Potential::Constant { value: rng.gen_range(-1.0..1.0) },
            _ => Potential::CosineWell { amplitude: rng.gen_range(0.0..1.0) },
        };
        (Connection::Zero, potential)
    } else if rank == 2 && rng.gen_bool(0.3) {
        (
            Connection::RotationCoupling { coupling: rng.gen_range(0.0..1.0) },
            Potential::Diagonal {
                entries: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            },
        )
    } else {
        (
            Connection::Zero,
            Potential::Diagonal {
                entries: (0..rank).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            },
        )
    };
    let bundle = BundleSpec {
        rank,
        scalar: FieldScalar::Real,
        connection: connection.clone(),
        potential,
        alpha: 0.0,
    };
    let bundle = BundleSpec { alpha: bundle.potential_sup_norm(), ..bundle };
    let boundary = if matches!(connection, Connection::RotationCoupling { .. }) {
        // rotation coupling commutes only with ±I
        if rng.gen_bool(0.5) {
            BoundaryOperator::neumann(rank)
        } else {
            BoundaryOperator::dirichlet(rank)
        }
    } else {
        match rng.gen_range(0..3) {
            0 => BoundaryOperator::dirichlet(rank),
            1 => BoundaryOperator::neumann(rank),
            _ => BoundaryOperator::blockwise(
                &(0..rank).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect::<Vec<i8>>(),
            )
            .unwrap(),
        }
    };
    let section = FieldSection::new(SectionKind::Constant {
        values: (0..rank).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    });
    let x = random_interior(&geometry, rng);
    let t = rng.gen_range(0.05..1.0);
    (HeatProblem { geometry, bundle, boundary, section }, x, t)
}

fn prop_coefficient_symmetries() -> PropertyResult {
    // the connection coefficient is skew-Hermitian and the potential
    // Hermitian on random samples, for every registry entry
    let mut rng = ChaCha8Rng::seed_from_u64(290);
    let mut worst: f64 = 0.0;
    let circle = GeometryModel::circle(1.0).unwrap();
    let interval = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
    let entries: Vec<(GeometryModel, BundleSpec)> = vec![
        (
            circle.clone(),
            BundleSpec {
                rank: 1,
                scalar: FieldScalar::Complex,
                connection: Connection::CircleHolonomy { coupling: 0.7 },
                potential: Potential::Zero,
                alpha: 0.0,
            },
        ),
        (
            interval.clone(),
            BundleSpec {
                rank: 2,
                scalar: FieldScalar::Real,
                connection: Connection::RotationCoupling { coupling: 0.9 },
                potential: Potential::Diagonal { entries: vec![0.4, -0.8] },
                alpha: 0.8,
            },
        ),
        (
            interval,
            BundleSpec {
                rank: 1,
                scalar: FieldScalar::Real,
                connection: Connection::Zero,
                potential: Potential::CosineWell { amplitude: 1.0 },
                alpha: 1.0,
            },
        ),
    ];
    for (g, b) in &entries {
        for _ in 0..1000 {
            let x = random_interior(g, &mut rng);
            let xi = random_velocity(g, &x, &mut rng, 3.0);
            let a = b.connection_coeff(g, &x, &xi);
            worst = worst.max((&a + a.adjoint()).norm());
            let v = b.potential_matrix(&x);
            worst = worst.max((&v - v.adjoint()).norm());
        }
    }
    PropertyResult::from_margin(
        "bundle-coefficient-symmetries",
        worst,
        1e-10,
        "skew-Hermitian connection and Hermitian potential on samples".into(),
    )
}

fn prop_gronwall_bound() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let (problem, x, t) = random_norm_bound_problem(&mut rng);
        for _ in 0..25 {
            let vel = random_velocity(&problem.geometry, &x, &mut rng, 3.0);
            if vel.norm() < 0.05 {
                continue;
            }
            let path = trace_reflected(&problem.geometry, &x, &vel, t, 1_000_000).unwrap();
            if !path.is_ok() {
                continue;
            }
            let tr = transport_path(&problem.bundle, &problem.boundary, &problem.geometry, &path)
                .unwrap();
            worst = worst.max(operator_norm(&tr.inverse) / (t * problem.bundle.alpha).exp());
        }
    }
    PropertyResult::from_margin(
        "bundle-gronwall-bound",
        worst,
        1.0 + 1e-6,
        "inverse transport norm over exp(t alpha), random problems".into(),
    )
}

fn prop_transport_isometry() -> PropertyResult {
    let g = GeometryModel::disk(1.0).unwrap();
    let b = BundleSpec {
        rank: 2,
        scalar: FieldScalar::Real,
        connection: Connection::Zero,
        potential: Potential::Zero,
        alpha: 0.0,
    };
    let bop = BoundaryOperator::blockwise(&[-1, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(310);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = random_interior(&g, &mut rng);
        let vel = random_velocity(&g, &x, &mut rng, 2.0);
        if vel.norm() < 0.05 {
            continue;
        }
        let path = trace_reflected(&g, &x, &vel, 1.0, 1_000_000).unwrap();
        if !path.is_ok() {
            continue;
        }
        let tr = transport_path(&b, &bop, &g, &path).unwrap();
        let w = CVector::from_vec(vec![
            Complex64::new(rng.gen::<f64>() - 0.5, 0.0),
            Complex64::new(rng.gen::<f64>() - 0.5, 0.0),
        ]);
        let tw = &tr.forward * &w;
        worst = worst.max((tw.norm() - w.norm()).abs());
    }
    PropertyResult::from_margin(
        "bundle-transport-isometry-v0",
        worst,
        1e-8,
        "norm change of transported vectors without potential".into(),
    )
}

fn prop_inverse_consistency() -> PropertyResult {
    let g = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
    let b = BundleSpec {
        rank: 2,
        scalar: FieldScalar::Real,
        connection: Connection::RotationCoupling { coupling: 0.7 },
        potential: Potential::Diagonal { entries: vec![0.9, -0.4] },
        alpha: 0.9,
    };
    let bop = BoundaryOperator::neumann(2);
    let mut rng = ChaCha8Rng::seed_from_u64(320);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let x = random_interior(&g, &mut rng);
        let vel = random_velocity(&g, &x, &mut rng, 3.0);
        if vel.norm() < 0.05 {
            continue;
        }
        let path = trace_reflected(&g, &x, &vel, 0.8, 1_000_000).unwrap();
        if !path.is_ok() {
            continue;
        }
        let tr = transport_path(&b, &bop, &g, &path).unwrap();
        let eye = CMatrix::identity(2, 2);
        let solved = tr.forward.clone().lu().solve(&eye).unwrap();
        worst = worst.max((&solved - &tr.inverse).norm());
    }
    PropertyResult::from_margin(
        "bundle-inverse-consistency",
        worst,
        1e-7,
        "inverse-equation accumulation against a linear solve".into(),
    )
}

fn prop_substep_convergence() -> PropertyResult {
    let g = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
    let b = BundleSpec {
        rank: 2,
        scalar: FieldScalar::Real,
        connection: Connection::RotationCoupling { coupling: 0.5 },
        potential: Potential::Diagonal { entries: vec![0.6, -0.6] },
        alpha: 0.6,
    };
    // fixed regression segments
    let segments = [
        (PhasePoint::new(v1(0.7), v1(1.3)), 1.0),
        (PhasePoint::new(v1(2.1), v1(-0.8)), 0.6),
        (PhasePoint::new(v1(1.1), v1(2.4)), 0.3),
    ];
    let mut worst: f64 = 0.0;
    for (start, dur) in segments {
        let p1 = transport_segment_matrix(&b, &g, &start, dur, 1).unwrap();
        let p2 = transport_segment_matrix(&b, &g, &start, dur, 2).unwrap();
        worst = worst.max((&p1 - &p2).norm());
    }
    PropertyResult::from_margin(
        "bundle-substep-convergence",
        worst,
        1e-9,
        "entry change under substep halving on regression segments".into(),
    )
}

fn prop_transport_multiplicativity() -> PropertyResult {
    let g = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
    let b = BundleSpec {
        rank: 2,
        scalar: FieldScalar::Real,
        connection: Connection::Zero,
        potential: Potential::Diagonal { entries: vec![0.4, -0.2] },
        alpha: 0.4,
    };
    let bop = BoundaryOperator::blockwise(&[1, -1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(330);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let x = random_interior(&g, &mut rng);
        let vel = random_velocity(&g, &x, &mut rng, 3.0);
        if vel.norm() < 0.2 {
            continue;
        }
        let t = 0.4 + rng.gen::<f64>();
        let split = t * (0.2 + 0.6 * rng.gen::<f64>());
        let whole = trace_reflected(&g, &x, &vel, t, 1_000_000).unwrap();
        let first = trace_reflected(&g, &x, &vel, split, 1_000_000).unwrap();
        let second =
            trace_reflected(&g, &first.end.position, &first.end.velocity, t - split, 1_000_000)
                .unwrap();
        if !(whole.is_ok() && first.is_ok() && second.is_ok()) {
            continue;
        }
        let tw = transport_path(&b, &bop, &g, &whole).unwrap();
        let t1 = transport_path(&b, &bop, &g, &first).unwrap();
        let t2 = transport_path(&b, &bop, &g, &second).unwrap();
        worst = worst.max((&t2.forward * &t1.forward - &tw.forward).norm());
    }
    PropertyResult::from_margin(
        "bundle-transport-multiplicativity",
        worst,
        1e-8,
        "split-path transport against whole-path transport".into(),
    )
}

// ---- semigroup ---------------------------------------------------------

fn prop_estimator_norm_bound() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (problem, x, t) = random_norm_bound_problem(&mut rng);
        let partition = Partition::uniform(t, 1 + (i % 3)).unwrap();
        let est = estimate_slice(&problem, &x, &partition, 2_000, 400 + i as u64, EstimateOptions::default())
            .unwrap();
        let bound = (t * problem.bundle.alpha).exp();
        worst = worst.max(est.value_norm() / (bound * problem.section.sup_norm().max(1e-300)));
        worst = worst.max(est.max_weight_norm / (bound * (1.0 + 1e-6)));
    }
    PropertyResult::from_margin(
        "semigroup-estimator-norm-bound",
        worst,
        1.0 + 1e-9,
        "estimate and per-sample weights against exp(t alpha) sup|u|".into(),
    )
}

fn dirichlet_sine_problem() -> HeatProblem {
    HeatProblem {
        geometry: GeometryModel::interval(0.0, std::f64::consts::PI).unwrap(),
        bundle: BundleSpec::trivial_scalar(),
        boundary: BoundaryOperator::dirichlet(1),
        section: FieldSection::new(SectionKind::SineMode { mode: 1 }),
    }
}

fn prop_coarea_composition() -> Result<PropertyResult> {
    // P over the concatenated partition against nested two-stage sampling
    let problem = dirichlet_sine_problem();
    let x = v1(1.0);
    let (t1, n1) = (0.2, 2usize);
    let (t2, n2) = (0.15, 3usize);

    let mut times = Partition::uniform(t1, n1)?.times().to_vec();
    times.extend(Partition::uniform(t2, n2)?.times().iter().skip(1).map(|s| t1 + s));
    let direct = estimate_slice(
        &problem,
        &x,
        &Partition::new(times)?,
        200_000,
        501,
        EstimateOptions::default(),
    )?;

    let outer_partition = Partition::uniform(t1, n1)?;
    let inner_partition = Partition::uniform(t2, n2)?;
    let outer_m = 3_000u64;
    let inner_m = 300u64;
    let deltas: Vec<f64> = outer_partition.deltas().collect();
    let samples: Vec<Option<f64>> = (0..outer_m)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::sample_stream(502, i);
            // walk the outer partition by hand, accumulating the Dirichlet sign
            let mut pos = x;
            let mut sign = 1.0;
            for dtau in &deltas {
                let vel = {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    v1((2.0 / dtau).sqrt() * z)
                };
                let path = trace_reflected(
                    &problem.geometry,
                    &pos,
                    &vel,
                    *dtau,
                    crate::billiard::default_reflection_cap(*dtau, vel.norm()),
                )
                .unwrap();
                if !path.is_ok() {
                    return None;
                }
                pos = path.end.position;
                if problem.geometry.classify_point(&pos).unwrap() == PointClass::Boundary {
                    return None;
                }
                if path.reflections() % 2 == 1 {
                    sign = -sign;
                }
            }
            let inner = estimate_slice(
                &problem,
                &pos,
                &inner_partition,
                inner_m,
                900_000 + i,
                EstimateOptions::default(),
            )
            .unwrap();
            Some(sign * inner.value[0].re)
        })
        .collect();

    let used: Vec<f64> = samples.into_iter().flatten().collect();
    let n = used.len() as f64;
    let mean = used.iter().sum::<f64>() / n;
    let var = used.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_nested = (var / n).sqrt();
    let combined = (se_nested.powi(2) + direct.stderr[0].powi(2)).sqrt();
    let diff = (mean - direct.value[0].re).abs();
    Ok(PropertyResult::from_margin(
        "semigroup-coarea-composition",
        diff / combined,
        4.0,
        format!("direct {} vs nested {mean}", direct.value[0].re),
    ))
}

fn prop_flat_exactness() -> Result<PropertyResult> {
    // no time-slicing bias on flat models without potential: every partition
    // reproduces the spectral value within noise
    let mut worst: f64 = 0.0;
    let mut details = String::new();

    struct Case {
        problem: HeatProblem,
        points: Vec<V3>,
        t: f64,
    }
    let cases = [
        Case { problem: dirichlet_sine_problem(), points: vec![v1(0.4), v1(1.5), v1(2.7)], t: 0.25 },
        Case {
            problem: HeatProblem {
                geometry: GeometryModel::interval(0.0, std::f64::consts::PI).unwrap(),
                bundle: BundleSpec::trivial_scalar(),
                boundary: BoundaryOperator::neumann(1),
                section: FieldSection::new(SectionKind::CosineMode { mode: 1 }),
            },
            points: vec![v1(0.4), v1(1.5), v1(2.7)],
            t: 0.25,
        },
        Case {
            problem: HeatProblem {
                geometry: GeometryModel::circle(1.0).unwrap(),
                bundle: BundleSpec {
                    rank: 1,
                    scalar: FieldScalar::Complex,
                    connection: Connection::CircleHolonomy { coupling: 0.5 },
                    potential: Potential::Zero,
                    alpha: 0.0,
                },
                boundary: BoundaryOperator::neumann(1),
                section: FieldSection::new(SectionKind::FourierMode { mode: 1 }),
            },
            points: vec![v1(0.0), v1(2.0), v1(4.0)],
            t: 0.5,
        },
        Case {
            problem: HeatProblem {
                geometry: GeometryModel::flat_torus(1.0, 1.3).unwrap(),
                bundle: BundleSpec::trivial_scalar(),
                boundary: BoundaryOperator::neumann(1),
                section: FieldSection::new(SectionKind::TorusCosMode { k1: 1, k2: 1 }),
            },
            points: vec![V3::new(0.2, 0.3, 0.0), V3::new(0.7, 1.0, 0.0)],
            t: 0.05,
        },
    ];
    for (ci, case) in cases.iter().enumerate() {
        let model = SpectralModel::for_problem(&case.problem).expect("flat spectral model");
        let evolved = model.spectral_evolve(&case.problem.section, case.t)?;
        for n in [1usize, 2, 4, 8] {
            let partition = Partition::uniform(case.t, n)?;
            for x in &case.points {
                let est = estimate_slice(
                    &case.problem,
                    x,
                    &partition,
                    50_000,
                    600 + ci as u64,
                    EstimateOptions::default(),
                )?;
                let mut oracle = vec![Complex64::new(0.0, 0.0)];
                evolved.eval_into(&case.problem.geometry, x, &mut oracle);
                let err = (est.value[0] - oracle[0]).norm();
                let ratio = err / est.stderr[0].max(1e-300);
                if ratio > worst {
                    worst = ratio;
                    details = format!("case {ci}, N = {n}");
                }
            }
        }
    }
    Ok(PropertyResult::from_margin("semigroup-flat-exactness", worst, 4.0, details))
}

fn prop_strong_continuity() -> Result<PropertyResult> {
    let problem = dirichlet_sine_problem();
    let grid: Vec<V3> = (1..=9)
        .map(|i| v1(std::f64::consts::PI * i as f64 / 10.0))
        .collect();
    let mut sups = Vec::new();
    for &t in &[0.1, 0.05, 0.025] {
        let partition = Partition::uniform(t, 1)?;
        let mut sup = 0.0_f64;
        let mut max_se = 0.0_f64;
        for x in &grid {
            let est =
                estimate_slice(&problem, x, &partition, 50_000, 610, EstimateOptions::default())?;
            let mut u0 = [Complex64::new(0.0, 0.0)];
            problem.section.eval_into(&problem.geometry, x, &mut u0);
            sup = sup.max((est.value[0] - u0[0]).norm());
            max_se = max_se.max(est.stderr[0]);
        }
        sups.push((t, sup, max_se));
    }
    let mut passed = true;
    for w in sups.windows(2) {
        let (_, s0, e0) = w[0];
        let (_, s1, e1) = w[1];
        if s1 > s0 + 2.0 * (e0 + e1) {
            passed = false;
        }
    }
    let measured = sups.last().unwrap().1 / sups.first().unwrap().1;
    let mut res = PropertyResult::from_margin(
        "semigroup-strong-continuity",
        measured,
        1.0,
        format!(
            "sup|P_t u - u| at t = 0.1/0.05/0.025: {:.4}/{:.4}/{:.4}",
            sups[0].1, sups[1].1, sups[2].1
        ),
    );
    res.passed = res.passed && passed;
    Ok(res)
}

fn prop_antithetic_zero() -> Result<PropertyResult> {
    let problem = dirichlet_sine_problem();
    let partition = Partition::uniform(0.25, 2)?;
    let est = estimate_slice(
        &problem,
        &v1(0.0),
        &partition,
        10_000,
        620,
        EstimateOptions { antithetic: true },
    )?;
    Ok(PropertyResult::from_margin(
        "semigroup-dirichlet-antithetic-zero",
        est.value[0].norm(),
        0.0,
        "boundary-start estimate with paired reflections".into(),
    ))
}

fn prop_seed_determinism() -> Result<PropertyResult> {
    let cfg = crate::harness::config::parse_config(determinism_config())?;
    let mut outputs = Vec::new();
    for threads in [1usize, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::Error::Config(e.to_string()))?;
        let report = pool.install(|| crate::harness::convergence::run_convergence(&cfg))?;
        let mut text = String::new();
        for p in &report.points {
            text.push_str(&format!("{:?} {:?} {}\n", p.estimate, p.stderr, p.rejected));
        }
        outputs.push(text);
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    Ok(PropertyResult {
        name: "semigroup-seed-determinism",
        passed: identical,
        measured: if identical { 0.0 } else { 1.0 },
        bound: 0.0,
        details: "estimates across 1/2/8-worker pools".into(),
    })
}

fn determinism_config() -> &'static str {
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
samples = 5000
seed = 4242

[grid]
kind = "uniform"
count = 3

[output]
dir = "out"
format = "csv"
"#
}

// ---- oracle ------------------------------------------------------------

fn prop_oracle_agreement() -> PropertyResult {
    let pi = std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut worst: f64 = 0.0;
    for bc in [ImageBc::Dirichlet, ImageBc::Neumann] {
        let spectral = SpectralModel::new(match bc {
            ImageBc::Dirichlet => SpectralProblem::IntervalDirichlet { a: 0.0, b: pi },
            ImageBc::Neumann => SpectralProblem::IntervalNeumann { a: 0.0, b: pi },
        });
        for _ in 0..100 {
            let x = rng.gen::<f64>() * pi;
            let y = rng.gen::<f64>() * pi;
            let t = 0.05 + 0.95 * rng.gen::<f64>();
            let ki = image_kernel(ImageProblem::Interval { a: 0.0, b: pi }, bc, x, y, t).unwrap();
            let ks = spectral.heat_kernel(x, y, t).unwrap();
            worst = worst.max((ki - ks).abs());
        }
    }
    PropertyResult::from_margin(
        "oracle-kernel-agreement",
        worst,
        1e-10,
        "image-sum against eigenfunction kernels at random triples".into(),
    )
}

fn prop_oracle_semigroup() -> PropertyResult {
    let pi = std::f64::consts::PI;
    // spectral calculus composes exactly; the kernels compose under an
    // intermediate integral
    let model = SpectralModel::new(SpectralProblem::IntervalDirichlet { a: 0.0, b: pi });
    let u0 = FieldSection::new(SectionKind::SineMode { mode: 2 });
    let once = model.spectral_evolve(&u0, 0.4).unwrap();
    let twice = model
        .spectral_evolve(&model.spectral_evolve(&u0, 0.25).unwrap(), 0.15)
        .unwrap();
    let mut worst = (once.scale - twice.scale).norm();

    for bc in [ImageBc::Dirichlet, ImageBc::Neumann] {
        let k = |x: f64, y: f64, t: f64| {
            image_kernel(ImageProblem::Interval { a: 0.0, b: pi }, bc, x, y, t).unwrap()
        };
        let (t1, t2) = (0.15, 0.25);
        let (x, y) = (1.0, 2.2);
        let n = 4000;
        let h = pi / n as f64;
        let mut total = 0.0;
        let mut left = k(x, 0.0, t1) * k(0.0, y, t2);
        for i in 0..n {
            let z0 = i as f64 * h;
            let mid = k(x, z0 + 0.5 * h, t1) * k(z0 + 0.5 * h, y, t2);
            let right = k(x, z0 + h, t1) * k(z0 + h, y, t2);
            total += h / 6.0 * (left + 4.0 * mid + right);
            left = right;
        }
        worst = worst.max((total - k(x, y, t1 + t2)).abs());
    }
    PropertyResult::from_margin(
        "oracle-semigroup-property",
        worst,
        1e-10,
        "two-stage evolution against the summed time".into(),
    )
}

fn prop_oracle_boundary_conditions() -> Vec<PropertyResult> {
    let pi = std::f64::consts::PI;
    let mut dirichlet_worst: f64 = 0.0;
    for y in [0.3, 1.1, 2.4] {
        for t in [0.05, 0.2, 0.8] {
            let k = image_kernel(ImageProblem::Interval { a: 0.0, b: pi }, ImageBc::Dirichlet, 0.0, y, t)
                .unwrap();
            dirichlet_worst = dirichlet_worst.max(k.abs());
            let spectral = SpectralModel::new(SpectralProblem::IntervalDirichlet { a: 0.0, b: pi });
            dirichlet_worst = dirichlet_worst.max(spectral.heat_kernel(pi, y, t).unwrap().abs());
        }
    }
    let mut neumann_worst: f64 = 0.0;
    for y in [0.3, 1.1, 2.4] {
        for t in [0.1, 0.4] {
            let f = |x: f64| {
                image_kernel(ImageProblem::Interval { a: 0.0, b: pi }, ImageBc::Neumann, x, y, t)
                    .unwrap()
            };
            let eps = 1e-4;
            let deriv = (-3.0 * f(0.0) + 4.0 * f(eps) - f(2.0 * eps)) / (2.0 * eps);
            neumann_worst = neumann_worst.max(deriv.abs());
        }
    }
    vec![
        PropertyResult::from_margin(
            "oracle-dirichlet-boundary-zero",
            dirichlet_worst,
            1e-12,
            "kernel values on the boundary".into(),
        ),
        PropertyResult::from_margin(
            "oracle-neumann-boundary-derivative",
            neumann_worst,
            1e-6,
            "one-sided kernel derivative at the boundary".into(),
        ),
    ]
}

fn prop_config_round_trip() -> Result<PropertyResult> {
    let cfg = crate::harness::config::parse_config(determinism_config())?;
    let emitted = crate::harness::config::emit_config(&cfg)?;
    let reparsed = crate::harness::config::parse_config(&emitted)?;
    let ok = cfg == reparsed;
    Ok(PropertyResult {
        name: "harness-config-round-trip",
        passed: ok,
        measured: if ok { 0.0 } else { 1.0 },
        bound: 0.0,
        details: "parse(emit(config)) == config".into(),
    })
}

/// The billiard dynamics subset (speed, inversion, rescaling, rollout
/// straightness, measure preservation).
pub fn billiard_suite() -> Vec<PropertyResult> {
    vec![
        prop_speed_preservation(),
        prop_flow_inversion(),
        prop_rescaling(),
        prop_anti_development(),
        prop_measure_preservation(),
    ]
}

/// Execute the full property catalogue with fixed seeds.
pub fn run_property_suite() -> Result<PropertyReport> {
    let mut results = vec![
        prop_reflection_involution(),
        prop_hit_consistency(),
        prop_sphere_drift(),
    ];
    results.extend(billiard_suite());
    results.push(prop_omega_rejection_rate());
    results.push(prop_coefficient_symmetries());
    results.push(prop_gronwall_bound());
    results.push(prop_transport_isometry());
    results.push(prop_inverse_consistency());
    results.push(prop_substep_convergence());
    results.push(prop_transport_multiplicativity());
    results.push(prop_estimator_norm_bound());
    results.push(prop_coarea_composition()?);
    results.push(prop_flat_exactness()?);
    results.push(prop_strong_continuity()?);
    results.push(prop_antithetic_zero()?);
    results.push(prop_seed_determinism()?);
    results.push(prop_oracle_agreement());
    results.push(prop_oracle_semigroup());
    results.extend(prop_oracle_boundary_conditions());
    results.push(prop_config_round_trip()?);

    // the kinetic action stays additive under concatenation
    let g = GeometryModel::interval(0.0, 10.0).unwrap();
    let p1 = trace_reflected(&g, &v1(1.0), &v1(1.0), 0.5, 10).unwrap();
    let p2 = trace_reflected(&g, &p1.end.position, &(p1.end.velocity * 3.0), 0.5, 10).unwrap();
    let total = path_energy(&p1).unwrap() + path_energy(&p2).unwrap();
    results.push(PropertyResult::from_margin(
        "billiard-energy-additivity",
        (total - 1.25).abs(),
        1e-12,
        "quarter-speed-squared action over a two-speed concatenation".into(),
    ));

    Ok(PropertyReport { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_properties_pass() {
        for r in [
            prop_reflection_involution(),
            prop_sphere_drift(),
            prop_substep_convergence(),
            prop_oracle_agreement(),
            prop_oracle_semigroup(),
        ] {
            assert!(r.passed, "{}: measured {} bound {}", r.name, r.measured, r.bound);
        }
        for r in prop_oracle_boundary_conditions() {
            assert!(r.passed, "{}: measured {} bound {}", r.name, r.measured, r.bound);
        }
        assert!(prop_config_round_trip().unwrap().passed);
        assert!(prop_antithetic_zero().unwrap().passed);
    }
}
