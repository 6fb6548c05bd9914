//! The default fixed-seed invariant suite must pass end to end.

use heatpath::bundle::{BoundaryOperator, BundleSpec, Connection, FieldScalar, Potential};
use heatpath::geometry::GeometryModel;
use heatpath::semigroup::{
    estimate_slice, EstimateOptions, FieldSection, HeatProblem, Partition, SectionKind,
};

#[test]
fn full_property_suite_passes() {
    let report = heatpath::harness::run_property_suite().unwrap();
    for line in report.lines() {
        println!("{line}");
    }
    assert!(report.all_passed());
}

#[test]
fn norm_bound_with_cosine_potential() {
    // every estimate stays below exp(t alpha) sup|u| for V = cos, alpha = 1
    let problem = HeatProblem {
        geometry: GeometryModel::interval(0.0, std::f64::consts::PI).unwrap(),
        bundle: BundleSpec {
            rank: 1,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::CosineWell { amplitude: 1.0 },
            alpha: 1.0,
        },
        boundary: BoundaryOperator::neumann(1),
        section: FieldSection::new(SectionKind::CosineMode { mode: 1 }),
    };
    let t: f64 = 0.5;
    let bound = t.exp() * problem.section.sup_norm();
    for n in [1usize, 2, 5] {
        let partition = Partition::uniform(t, n).unwrap();
        for x in [0.4, 1.3, 2.8] {
            let est = estimate_slice(
                &problem,
                &heatpath::geometry::V3::new(x, 0.0, 0.0),
                &partition,
                5_000,
                77,
                EstimateOptions::default(),
            )
            .unwrap();
            assert!(est.value_norm() <= bound * (1.0 + 1e-12));
            assert!(est.max_weight_norm <= t.exp() * (1.0 + 1e-6));
        }
    }
}
