//! Rank-k metric bundle data and path-ordered transport.
//!
//! Bundles are globally trivialized over the model manifolds: the connection
//! is `d + A` with a skew-Hermitian coefficient `A` linear in the tangent
//! slot, the potential `V` is a Hermitian matrix field, and the boundary
//! operator `B` is a constant symmetric involution in the trivialization.
//! Transport along a segment solves `P' = (V - A(γ̇)) P`; along a whole path
//! `B` is multiplied in at every reflection event (a time-0 event realizes
//! the boundary-start factor). The inverse transport is accumulated through
//! the transposed equation `Q' = -Q (V - A(γ̇))`, not by matrix inversion.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::billiard::ReflectedPath;
use crate::geometry::{GeometryModel, ModelKind, PhasePoint, V3};
use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Scalar field of the bundle fibers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldScalar {
    Real,
    Complex,
}

/// Connection coefficient registry.
#[derive(Clone, Debug, PartialEq)]
pub enum Connection {
    Zero,
    /// Rank-1 complex coefficient `i c dθ` on the circle chart.
    CircleHolonomy { coupling: f64 },
    /// Rank-2 real rotation coupling `c ξ_x [[0, 1], [-1, 0]]`; its nonzero
    /// off-diagonal makes it fail to commute with `diag(1, -1)`.
    RotationCoupling { coupling: f64 },
}

/// Potential registry. All entries are Hermitian by construction.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Zero,
    /// `value · I`.
    Constant { value: f64 },
    /// Fixed diagonal, one entry per rank.
    Diagonal { entries: Vec<f64> },
    /// Rank-1 `amplitude · cos(x_0)`.
    CosineWell { amplitude: f64 },
}

/// Rank-k bundle data for a Laplace-type operator.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleSpec {
    pub rank: usize,
    pub scalar: FieldScalar,
    pub connection: Connection,
    pub potential: Potential,
    /// Certified bound on the pointwise operator norm of the potential.
    pub alpha: f64,
}

impl BundleSpec {
    /// Rank-1 real bundle with no connection and no potential.
    pub fn trivial_scalar() -> Self {
        BundleSpec {
            rank: 1,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::Zero,
            alpha: 0.0,
        }
    }

    pub fn validate(&self, g: &GeometryModel) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("bundle rank must be at least 1"));
        }
        match &self.connection {
            Connection::CircleHolonomy { .. } => {
                if self.rank != 1 || self.scalar != FieldScalar::Complex {
                    return Err(Error::invalid(
                        "circle holonomy connection needs a rank-1 complex bundle",
                    ));
                }
                if !matches!(g.kind(), ModelKind::Circle { .. }) {
                    return Err(Error::invalid("circle holonomy connection needs the circle"));
                }
            }
            Connection::RotationCoupling { .. } => {
                if self.rank != 2 {
                    return Err(Error::invalid("rotation coupling needs rank 2"));
                }
            }
            Connection::Zero => {}
        }
        match &self.potential {
            Potential::Diagonal { entries } if entries.len() != self.rank => {
                return Err(Error::invalid("diagonal potential length must equal rank"));
            }
            Potential::CosineWell { .. } if self.rank != 1 => {
                return Err(Error::invalid("cosine well potential is rank-1"));
            }
            _ => {}
        }
        let sup = self.potential_sup_norm();
        if self.alpha + 1e-12 < sup {
            return Err(Error::invalid(format!(
                "alpha = {} does not dominate the potential norm {sup}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Supremum of the pointwise potential operator norm (exact for the
    /// registry entries).
    pub fn potential_sup_norm(&self) -> f64 {
        match &self.potential {
            Potential::Zero => 0.0,
            Potential::Constant { value } => value.abs(),
            Potential::Diagonal { entries } => entries.iter().fold(0.0, |m, e| m.max(e.abs())),
            Potential::CosineWell { amplitude } => amplitude.abs(),
        }
    }

    /// The connection coefficient `A(x, ξ)`.
    pub fn connection_coeff(&self, g: &GeometryModel, _x: &V3, xi: &V3) -> CMatrix {
        match self.connection {
            Connection::Zero => CMatrix::zeros(self.rank, self.rank),
            Connection::CircleHolonomy { coupling } => {
                let radius = match g.kind() {
                    ModelKind::Circle { radius } => *radius,
                    _ => 1.0,
                };
                CMatrix::from_element(1, 1, Complex64::new(0.0, coupling * xi.x / radius))
            }
            Connection::RotationCoupling { coupling } => {
                let c = Complex64::new(coupling * xi.x, 0.0);
                CMatrix::from_row_slice(
                    2,
                    2,
                    &[Complex64::new(0.0, 0.0), c, -c, Complex64::new(0.0, 0.0)],
                )
            }
        }
    }

    /// `ω(γ̇)` for rank-1 connections (`A = i ω`); zero when there is none.
    /// Constant along geodesics for the registry entries, so its line
    /// integral over a segment is exactly `rate · duration`.
    pub fn phase_rate(&self, g: &GeometryModel, _x: &V3, v: &V3) -> f64 {
        match self.connection {
            Connection::CircleHolonomy { coupling } => {
                let radius = match g.kind() {
                    ModelKind::Circle { radius } => *radius,
                    _ => 1.0,
                };
                coupling * v.x / radius
            }
            _ => 0.0,
        }
    }

    /// The potential `V(x)`.
    pub fn potential_matrix(&self, x: &V3) -> CMatrix {
        match &self.potential {
            Potential::Zero => CMatrix::zeros(self.rank, self.rank),
            Potential::Constant { value } => {
                CMatrix::identity(self.rank, self.rank) * Complex64::new(*value, 0.0)
            }
            Potential::Diagonal { entries } => CMatrix::from_diagonal(&CVector::from_iterator(
                entries.len(),
                entries.iter().map(|e| Complex64::new(*e, 0.0)),
            )),
            Potential::CosineWell { amplitude } => {
                CMatrix::from_element(1, 1, Complex64::new(amplitude * x.x.cos(), 0.0))
            }
        }
    }

    /// Diagonal entry of the potential at `x` (all registry entries are
    /// diagonal).
    pub fn potential_component(&self, component: usize, x: &V3) -> f64 {
        match &self.potential {
            Potential::Zero => 0.0,
            Potential::Constant { value } => *value,
            Potential::Diagonal { entries } => entries[component],
            Potential::CosineWell { amplitude } => amplitude * x.x.cos(),
        }
    }

    pub fn potential_is_position_dependent(&self) -> bool {
        matches!(self.potential, Potential::CosineWell { .. })
    }

    /// Bound on `‖A(x, ξ)‖` per unit `|ξ|`.
    pub fn connection_norm_bound(&self, g: &GeometryModel) -> f64 {
        match self.connection {
            Connection::Zero => 0.0,
            Connection::CircleHolonomy { coupling } => {
                let radius = match g.kind() {
                    ModelKind::Circle { radius } => *radius,
                    _ => 1.0,
                };
                coupling.abs() / radius
            }
            Connection::RotationCoupling { coupling } => coupling.abs(),
        }
    }

    /// Whether transport decouples componentwise with this boundary operator
    /// (enables the allocation-free estimator kernel).
    pub fn is_diagonal_with(&self, bop: &BoundaryOperator) -> bool {
        let conn_ok = match self.connection {
            Connection::Zero | Connection::CircleHolonomy { .. } => true,
            Connection::RotationCoupling { .. } => false,
        };
        conn_ok && bop.diagonal_signs().is_some()
    }
}

/// Preset tag of a boundary operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryPreset {
    Dirichlet,
    Neumann,
    Blockwise,
}

/// A constant symmetric involution acting on the fibers over the boundary.
/// `B = -I` prescribes Dirichlet components, `B = +I` Neumann ones, and
/// blockwise signs mix the two componentwise.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryOperator {
    matrix: CMatrix,
    preset: BoundaryPreset,
}

impl BoundaryOperator {
    pub fn dirichlet(rank: usize) -> Self {
        BoundaryOperator {
            matrix: CMatrix::identity(rank, rank) * Complex64::new(-1.0, 0.0),
            preset: BoundaryPreset::Dirichlet,
        }
    }

    pub fn neumann(rank: usize) -> Self {
        BoundaryOperator {
            matrix: CMatrix::identity(rank, rank),
            preset: BoundaryPreset::Neumann,
        }
    }

    pub fn blockwise(signs: &[i8]) -> Result<Self> {
        if signs.is_empty() || signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::invalid("blockwise signs must be ±1"));
        }
        let diag = CVector::from_iterator(
            signs.len(),
            signs.iter().map(|s| Complex64::new(*s as f64, 0.0)),
        );
        Ok(BoundaryOperator {
            matrix: CMatrix::from_diagonal(&diag),
            preset: BoundaryPreset::Blockwise,
        })
    }

    pub fn rank(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn preset(&self) -> BoundaryPreset {
        self.preset
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// The diagonal as real signs, when the operator is diagonal.
    pub fn diagonal_signs(&self) -> Option<Vec<f64>> {
        let n = self.rank();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.matrix[(i, j)].norm() != 0.0 {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self.matrix[(i, i)].re).collect())
    }
}

/// Result of transporting along a whole reflected path.
#[derive(Clone, Debug)]
pub struct TransportResult {
    /// Path-ordered transport with `B` inserted at every reflection.
    pub forward: CMatrix,
    /// Its inverse, from the inverse transport equation.
    pub inverse: CMatrix,
    /// Number of `B` factors (reflection events, including a time-0 start).
    pub b_insertions: usize,
}

/// Operator (spectral) norm of a small matrix.
pub fn operator_norm(m: &CMatrix) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Substep count for a segment: `h ≤ min(Δs, 0.01 / (α + ‖A‖·|v| + 1))`.
fn substep_count(b: &BundleSpec, g: &GeometryModel, speed: f64, duration: f64) -> usize {
    let rate = b.alpha + b.connection_norm_bound(g) * speed + 1.0;
    let h_max = 0.01 / rate;
    (duration / h_max).ceil().max(1.0) as usize
}

/// Transport along one geodesic segment: the value at `duration` of the
/// solution of `P' = (V - A(γ̇)) P`, `P(0) = I`. Rank-1 bundles use the
/// closed-form exponential with Simpson quadrature; higher ranks a classical
/// 4th-order one-step method on the same fixed substeps.
pub fn transport_segment(
    b: &BundleSpec,
    g: &GeometryModel,
    start: &PhasePoint,
    duration: f64,
) -> Result<CMatrix> {
    if !(duration >= 0.0) {
        return Err(Error::invalid("segment duration must be nonnegative"));
    }
    if b.rank == 1 {
        let z = scalar_segment_exponent(b, g, start, duration)?;
        Ok(CMatrix::from_element(1, 1, z.exp()))
    } else {
        transport_segment_matrix(b, g, start, duration, 1)
    }
}

/// Exponent `∫ V ds - i ∫ ω(γ̇) ds` of the rank-1 closed form.
pub fn scalar_segment_exponent(
    b: &BundleSpec,
    g: &GeometryModel,
    start: &PhasePoint,
    duration: f64,
) -> Result<Complex64> {
    let pot = simpson_potential_component(b, g, start, duration, 0)?;
    let phase = b.phase_rate(g, &start.position, &start.velocity) * duration;
    Ok(Complex64::new(pot, -phase))
}

/// Composite Simpson quadrature of one diagonal potential component along a
/// segment, on the same substeps as the matrix integrator. Exact shortcut
/// for position-independent entries.
pub fn simpson_potential_component(
    b: &BundleSpec,
    g: &GeometryModel,
    start: &PhasePoint,
    duration: f64,
    component: usize,
) -> Result<f64> {
    if duration == 0.0 {
        return Ok(0.0);
    }
    if !b.potential_is_position_dependent() {
        return Ok(b.potential_component(component, &start.position) * duration);
    }
    let n = substep_count(b, g, start.speed(), duration);
    let h = duration / n as f64;
    let mut total = 0.0;
    let mut f_left = b.potential_component(component, &start.position);
    for i in 0..n {
        let s0 = i as f64 * h;
        let mid = g.geodesic_advance(start, s0 + 0.5 * h)?.position;
        let right = g.geodesic_advance(start, s0 + h)?.position;
        let f_mid = b.potential_component(component, &mid);
        let f_right = b.potential_component(component, &right);
        total += h / 6.0 * (f_left + 4.0 * f_mid + f_right);
        f_left = f_right;
    }
    Ok(total)
}

/// 4th-order one-step integration of `P' = (V - A(γ̇)) P` over a segment.
/// `refine` scales the substep count (used by the convergence check).
pub fn transport_segment_matrix(
    b: &BundleSpec,
    g: &GeometryModel,
    start: &PhasePoint,
    duration: f64,
    refine: usize,
) -> Result<CMatrix> {
    let k = b.rank;
    let mut p = CMatrix::identity(k, k);
    if duration == 0.0 {
        return Ok(p);
    }
    let n = substep_count(b, g, start.speed(), duration) * refine.max(1);
    let h = duration / n as f64;
    let two = Complex64::new(2.0, 0.0);
    let coeff = |s: f64| -> Result<CMatrix> {
        let at = g.geodesic_advance(start, s)?;
        Ok(b.potential_matrix(&at.position) - b.connection_coeff(g, &at.position, &at.velocity))
    };
    for i in 0..n {
        let s0 = i as f64 * h;
        let c1 = coeff(s0)?;
        let c2 = coeff(s0 + 0.5 * h)?;
        let c4 = coeff(s0 + h)?;
        let k1 = &c1 * &p;
        let k2 = &c2 * &(&p + &k1 * Complex64::new(0.5 * h, 0.0));
        let k3 = &c2 * &(&p + &k2 * Complex64::new(0.5 * h, 0.0));
        let k4 = &c4 * &(&p + &k3 * Complex64::new(h, 0.0));
        p += (k1 + k2 * two + k3 * two + k4) * Complex64::new(h / 6.0, 0.0);
    }
    Ok(p)
}

/// The same one-step scheme for the inverse equation `Q' = -Q (V - A(γ̇))`.
pub fn inverse_segment_matrix(
    b: &BundleSpec,
    g: &GeometryModel,
    start: &PhasePoint,
    duration: f64,
) -> Result<CMatrix> {
    let k = b.rank;
    let mut q = CMatrix::identity(k, k);
    if duration == 0.0 {
        return Ok(q);
    }
    let n = substep_count(b, g, start.speed(), duration);
    let h = duration / n as f64;
    let two = Complex64::new(2.0, 0.0);
    let coeff = |s: f64| -> Result<CMatrix> {
        let at = g.geodesic_advance(start, s)?;
        Ok(b.potential_matrix(&at.position) - b.connection_coeff(g, &at.position, &at.velocity))
    };
    for i in 0..n {
        let s0 = i as f64 * h;
        let c1 = coeff(s0)?;
        let c2 = coeff(s0 + 0.5 * h)?;
        let c4 = coeff(s0 + h)?;
        let k1 = -(&q * &c1);
        let k2 = -(&(&q + &k1 * Complex64::new(0.5 * h, 0.0)) * &c2);
        let k3 = -(&(&q + &k2 * Complex64::new(0.5 * h, 0.0)) * &c2);
        let k4 = -(&(&q + &k3 * Complex64::new(h, 0.0)) * &c4);
        q += (k1 + k2 * two + k3 * two + k4) * Complex64::new(h / 6.0, 0.0);
    }
    Ok(q)
}

/// Path-ordered transport along a reflected path, with `B` inserted at every
/// reflection event in time order. Errors on rejected paths.
pub fn transport_path(
    b: &BundleSpec,
    bop: &BoundaryOperator,
    g: &GeometryModel,
    path: &ReflectedPath,
) -> Result<TransportResult> {
    if !path.is_ok() {
        return Err(Error::RejectedPath("transport"));
    }
    if bop.rank() != b.rank {
        return Err(Error::invalid("boundary operator rank mismatch"));
    }
    let k = b.rank;
    let mut forward = CMatrix::identity(k, k);
    let mut inverse = CMatrix::identity(k, k);
    let mut insertions = 0usize;
    let mut next_event = 0usize;
    let mut clock = 0.0;
    // events sit exactly at segment joints (times accumulate identically
    // here and in the tracer), so `<=` matches them structurally
    let mut apply_due = |at: f64, forward: &mut CMatrix, inverse: &mut CMatrix, n: &mut usize| {
        while *n < path.events.len() && path.events[*n].time <= at {
            *forward = bop.matrix() * &*forward;
            *inverse = &*inverse * bop.matrix();
            insertions += 1;
            *n += 1;
        }
    };
    for seg in &path.segments {
        apply_due(clock, &mut forward, &mut inverse, &mut next_event);
        let p_seg = transport_segment(b, g, &seg.start, seg.duration)?;
        let q_seg = if k == 1 {
            let z = scalar_segment_exponent(b, g, &seg.start, seg.duration)?;
            CMatrix::from_element(1, 1, (-z).exp())
        } else {
            inverse_segment_matrix(b, g, &seg.start, seg.duration)?
        };
        forward = &p_seg * &forward;
        inverse = &inverse * &q_seg;
        clock += seg.duration;
    }
    apply_due(clock, &mut forward, &mut inverse, &mut next_event);
    Ok(TransportResult { forward, inverse, b_insertions: insertions })
}

/// Validation report for a boundary operator against a bundle and geometry.
#[derive(Clone, Debug)]
pub struct BoundaryValidation {
    pub involution_defect: f64,
    pub symmetry_defect: f64,
    pub projector_defect: f64,
    pub max_commutator: f64,
    pub valid: bool,
    pub note: Option<String>,
}

/// Check `B² = I`, `B = B*`, orthogonality of the eigenprojectors
/// `(I ± B)/2`, and the sampled commutator `[A(x, ξ), B]` along boundary
/// tangents.
pub fn validate_boundary_operator(
    b: &BundleSpec,
    bop: &BoundaryOperator,
    g: &GeometryModel,
) -> Result<BoundaryValidation> {
    let m = bop.matrix();
    let k = bop.rank();
    let eye = CMatrix::identity(k, k);
    let involution_defect = (m * m - &eye).norm();
    let symmetry_defect = (m - m.adjoint()).norm();
    let p_plus = (&eye + m) * Complex64::new(0.5, 0.0);
    let p_minus = (&eye - m) * Complex64::new(0.5, 0.0);
    let projector_defect = (&p_plus * &p_plus - &p_plus)
        .norm()
        .max((&p_minus * &p_minus - &p_minus).norm())
        .max((&p_plus - p_plus.adjoint()).norm());

    if !g.has_boundary() {
        let valid = involution_defect <= 1e-12 && symmetry_defect <= 1e-12;
        return Ok(BoundaryValidation {
            involution_defect,
            symmetry_defect,
            projector_defect,
            max_commutator: 0.0,
            valid,
            note: Some("closed model: commutator check vacuous".into()),
        });
    }

    let mut max_commutator: f64 = 0.0;
    if g.dim() >= 2 {
        let samples = 64;
        for i in 0..samples {
            let x = g.boundary_point((i as f64 + 0.5) / samples as f64)?;
            let n = g.inward_normal(&x)?;
            let xi = V3::new(-n.y, n.x, 0.0);
            let a = b.connection_coeff(g, &x, &xi);
            let comm = (&a * m - m * &a).norm();
            max_commutator = max_commutator.max(comm);
        }
    }
    let valid = involution_defect <= 1e-12 && symmetry_defect <= 1e-12 && max_commutator <= 1e-8;
    Ok(BoundaryValidation {
        involution_defect,
        symmetry_defect,
        projector_defect,
        max_commutator,
        valid,
        note: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billiard::trace_reflected;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64) -> V3 {
        V3::new(x, y, 0.0)
    }

    #[test]
    fn constant_potential_exponential() {
        let g = GeometryModel::interval(0.0, 10.0).unwrap();
        let b = BundleSpec {
            rank: 1,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::Constant { value: 0.7 },
            alpha: 0.7,
        };
        let start = PhasePoint::new(v(1.0, 0.0), v(1.0, 0.0));
        let p = transport_segment(&b, &g, &start, 2.0).unwrap();
        assert_relative_eq!(p[(0, 0)].re, (0.7_f64 * 2.0).exp(), epsilon = 1e-10);
        assert_eq!(p[(0, 0)].im, 0.0);
    }

    #[test]
    fn diagonal_potential_decouples() {
        let g = GeometryModel::interval(0.0, 10.0).unwrap();
        let b = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::Diagonal { entries: vec![0.3, -0.5] },
            alpha: 0.5,
        };
        let start = PhasePoint::new(v(1.0, 0.0), v(1.0, 0.0));
        let t = 1.3;
        let p = transport_segment(&b, &g, &start, t).unwrap();
        assert_relative_eq!(p[(0, 0)].re, (0.3 * t).exp(), epsilon = 1e-9);
        assert_relative_eq!(p[(1, 1)].re, (-0.5 * t).exp(), epsilon = 1e-9);
        assert!(p[(0, 1)].norm() < 1e-12 && p[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn circle_holonomy_closed_form() {
        // transport of `i c dθ` over an arc of angle Δθ is exp(-i c Δθ)
        let g = GeometryModel::circle(1.0).unwrap();
        let b = BundleSpec {
            rank: 1,
            scalar: FieldScalar::Complex,
            connection: Connection::CircleHolonomy { coupling: 0.5 },
            potential: Potential::Zero,
            alpha: 0.0,
        };
        b.validate(&g).unwrap();
        let dtheta = 1.1;
        let start = PhasePoint::new(v(0.3, 0.0), v(1.0, 0.0));
        let p = transport_segment(&b, &g, &start, dtheta).unwrap();
        let expected = Complex64::new(0.0, -0.5 * dtheta).exp();
        assert!((p[(0, 0)] - expected).norm() <= 1e-12);
    }

    #[test]
    fn scalar_closed_form_matches_matrix_integrator() {
        let g = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
        let b = BundleSpec {
            rank: 1,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::CosineWell { amplitude: 1.0 },
            alpha: 1.0,
        };
        let start = PhasePoint::new(v(0.4, 0.0), v(1.7, 0.0));
        let dur = 1.2;
        let scalar = transport_segment(&b, &g, &start, dur).unwrap();
        let matrix = transport_segment_matrix(&b, &g, &start, dur, 1).unwrap();
        assert!((scalar[(0, 0)] - matrix[(0, 0)]).norm() <= 1e-8);
    }

    #[test]
    fn dirichlet_weight_is_reflection_parity() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let b = BundleSpec::trivial_scalar();
        let bop = BoundaryOperator::dirichlet(1);
        for (x, vel, t) in [(0.3, 1.0, 1.0), (0.5, 3.0, 1.0), (0.2, -2.0, 2.3)] {
            let path = trace_reflected(&g, &v(x, 0.0), &v(vel, 0.0), t, 10_000).unwrap();
            let tr = transport_path(&b, &bop, &g, &path).unwrap();
            let expected = if path.reflections().is_multiple_of(2) { 1.0 } else { -1.0 };
            assert_relative_eq!(tr.forward[(0, 0)].re, expected, epsilon = 1e-12);
            assert_relative_eq!(tr.inverse[(0, 0)].re, expected, epsilon = 1e-12);
            assert_eq!(tr.b_insertions, path.reflections());
        }
    }

    #[test]
    fn neumann_weight_is_one() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let b = BundleSpec::trivial_scalar();
        let bop = BoundaryOperator::neumann(1);
        let path = trace_reflected(&g, &v(0.3, 0.0), &v(4.0, 0.0), 1.0, 10_000).unwrap();
        let tr = transport_path(&b, &bop, &g, &path).unwrap();
        assert_relative_eq!(tr.forward[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_start_inserts_leading_factor() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let b = BundleSpec::trivial_scalar();
        let bop = BoundaryOperator::dirichlet(1);
        let path = trace_reflected(&g, &v(0.0, 0.0), &v(-1.0, 0.0), 0.25, 100).unwrap();
        assert_eq!(path.sign, -1);
        let tr = transport_path(&b, &bop, &g, &path).unwrap();
        assert_relative_eq!(tr.forward[(0, 0)].re, -1.0, epsilon = 1e-12);
        assert_eq!(tr.b_insertions, 1);
    }

    #[test]
    fn transport_is_multiplicative_under_concatenation() {
        let g = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
        let b = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::Diagonal { entries: vec![0.4, -0.2] },
            alpha: 0.4,
        };
        let bop = BoundaryOperator::blockwise(&[1, -1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let x = 0.2 + 2.5 * rng.gen::<f64>();
            let vel = (rng.gen::<f64>() - 0.5) * 6.0;
            if vel.abs() < 0.2 {
                continue;
            }
            let t = 0.4 + rng.gen::<f64>();
            let split = t * (0.2 + 0.6 * rng.gen::<f64>());
            let whole = trace_reflected(&g, &v(x, 0.0), &v(vel, 0.0), t, 10_000).unwrap();
            let first = trace_reflected(&g, &v(x, 0.0), &v(vel, 0.0), split, 10_000).unwrap();
            let second = trace_reflected(
                &g,
                &first.end.position,
                &first.end.velocity,
                t - split,
                10_000,
            )
            .unwrap();
            let tw = transport_path(&b, &bop, &g, &whole).unwrap();
            let t1 = transport_path(&b, &bop, &g, &first).unwrap();
            let t2 = transport_path(&b, &bop, &g, &second).unwrap();
            assert!((&t2.forward * &t1.forward - &tw.forward).norm() <= 1e-8);
        }
    }

    #[test]
    fn transport_order_with_noncommuting_insertions() {
        // on the interval the boundary is zero-dimensional, so a rotation
        // coupling is compatible with blockwise signs even though B does not
        // commute with the interior transport; ordering mistakes show up
        // here as multiplicativity violations
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let b = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::RotationCoupling { coupling: 0.9 },
            potential: Potential::Diagonal { entries: vec![0.7, -0.4] },
            alpha: 0.7,
        };
        let bop = BoundaryOperator::blockwise(&[1, -1]).unwrap();
        assert!(validate_boundary_operator(&b, &bop, &g).unwrap().valid);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..15 {
            let x = 0.05 + 0.9 * rng.gen::<f64>();
            let vel = (rng.gen::<f64>() - 0.5) * 6.0;
            if vel.abs() < 0.3 {
                continue;
            }
            let t = 0.5 + rng.gen::<f64>();
            let split = t * (0.3 + 0.4 * rng.gen::<f64>());
            let whole = trace_reflected(&g, &v(x, 0.0), &v(vel, 0.0), t, 10_000).unwrap();
            if whole.reflections() < 1 {
                continue;
            }
            let first = trace_reflected(&g, &v(x, 0.0), &v(vel, 0.0), split, 10_000).unwrap();
            let second = trace_reflected(
                &g,
                &first.end.position,
                &first.end.velocity,
                t - split,
                10_000,
            )
            .unwrap();
            let tw = transport_path(&b, &bop, &g, &whole).unwrap();
            let t1 = transport_path(&b, &bop, &g, &first).unwrap();
            let t2 = transport_path(&b, &bop, &g, &second).unwrap();
            assert!((&t2.forward * &t1.forward - &tw.forward).norm() <= 1e-8);
            assert!((&t1.inverse * &t2.inverse - &tw.inverse).norm() <= 1e-8);
            let eye = CMatrix::identity(2, 2);
            assert!((&tw.forward * &tw.inverse - &eye).norm() <= 1e-8);
        }
    }

    #[test]
    fn boundary_start_factor_matches_decoration_algebra() {
        // the two decorations of the same footpoint path differ by one
        // trailing boundary factor: P(outward start) = P(inward start) B
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let b = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::RotationCoupling { coupling: 0.8 },
            potential: Potential::Diagonal { entries: vec![0.5, -0.3] },
            alpha: 0.5,
        };
        let bop = BoundaryOperator::blockwise(&[1, -1]).unwrap();
        let outward = trace_reflected(&g, &v(0.0, 0.0), &v(-1.3, 0.0), 0.6, 100).unwrap();
        assert_eq!(outward.sign, -1);
        let inward = trace_reflected(&g, &v(0.0, 0.0), &v(1.3, 0.0), 0.6, 100).unwrap();
        assert_eq!(inward.sign, 1);
        assert!((outward.end.position - inward.end.position).norm() <= 1e-12);
        let t_out = transport_path(&b, &bop, &g, &outward).unwrap();
        let t_in = transport_path(&b, &bop, &g, &inward).unwrap();
        assert_eq!(t_out.b_insertions, t_in.b_insertions + 1);
        let composed = &t_in.forward * bop.matrix();
        assert!((&t_out.forward - &composed).norm() <= 1e-10);
        let inv_composed = bop.matrix() * &t_in.inverse;
        assert!((&t_out.inverse - &inv_composed).norm() <= 1e-10);
    }

    #[test]
    fn inverse_consistency_and_gronwall() {
        let g = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
        let b = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::RotationCoupling { coupling: 0.6 },
            potential: Potential::Diagonal { entries: vec![0.8, -0.3] },
            alpha: 0.8,
        };
        let bop = BoundaryOperator::neumann(2);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let x = 0.2 + 2.5 * rng.gen::<f64>();
            let vel = (rng.gen::<f64>() - 0.5) * 4.0;
            if vel.abs() < 0.2 {
                continue;
            }
            let t = 0.3 + 0.7 * rng.gen::<f64>();
            let path = trace_reflected(&g, &v(x, 0.0), &v(vel, 0.0), t, 10_000).unwrap();
            let tr = transport_path(&b, &bop, &g, &path).unwrap();
            let eye = CMatrix::identity(2, 2);
            assert!((&tr.forward * &tr.inverse - &eye).norm() <= 1e-8);
            let solved = tr.forward.clone().lu().solve(&eye).expect("invertible");
            assert!((&solved - &tr.inverse).norm() <= 1e-7);
            assert!(operator_norm(&tr.inverse) <= (t * b.alpha).exp() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn transport_isometry_without_potential() {
        let g = GeometryModel::disk(1.0).unwrap();
        let b = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::Zero,
            alpha: 0.0,
        };
        let bop = BoundaryOperator::blockwise(&[-1, 1]).unwrap();
        let path = trace_reflected(&g, &v(0.1, 0.2), &v(1.0, 0.7), 2.0, 100).unwrap();
        let tr = transport_path(&b, &bop, &g, &path).unwrap();
        let w = CVector::from_vec(vec![Complex64::new(0.3, 0.0), Complex64::new(-1.2, 0.0)]);
        let tw = &tr.forward * &w;
        assert!((tw.norm() - w.norm()).abs() <= 1e-8);
    }

    #[test]
    fn substep_halving_is_converged() {
        let g = GeometryModel::interval(0.0, std::f64::consts::PI).unwrap();
        let b = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::RotationCoupling { coupling: 0.5 },
            potential: Potential::Diagonal { entries: vec![0.6, -0.6] },
            alpha: 0.6,
        };
        let start = PhasePoint::new(v(0.7, 0.0), v(1.3, 0.0));
        let p1 = transport_segment_matrix(&b, &g, &start, 1.0, 1).unwrap();
        let p2 = transport_segment_matrix(&b, &g, &start, 1.0, 2).unwrap();
        assert!((&p1 - &p2).norm() <= 1e-9);
    }

    #[test]
    fn boundary_operator_validation() {
        let g = GeometryModel::disk(1.0).unwrap();
        let scalar = BundleSpec::trivial_scalar();
        let rep = validate_boundary_operator(&scalar, &BoundaryOperator::dirichlet(1), &g).unwrap();
        assert!(rep.valid);
        assert!(rep.involution_defect <= 1e-12 && rep.projector_defect <= 1e-12);

        let b2 = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::Zero,
            alpha: 0.0,
        };
        let block = BoundaryOperator::blockwise(&[1, -1]).unwrap();
        let rep = validate_boundary_operator(&b2, &block, &g).unwrap();
        assert!(rep.valid);
        assert!(rep.max_commutator <= 1e-12);

        // an off-diagonal coefficient fails to commute with diag(1, -1)
        let coupled = BundleSpec {
            rank: 2,
            scalar: FieldScalar::Real,
            connection: Connection::RotationCoupling { coupling: 0.6 },
            potential: Potential::Zero,
            alpha: 0.0,
        };
        let rep = validate_boundary_operator(&coupled, &block, &g).unwrap();
        assert!(!rep.valid);
        assert!(rep.max_commutator > 1e-3);

        let closed = GeometryModel::circle(1.0).unwrap();
        let rep =
            validate_boundary_operator(&scalar, &BoundaryOperator::dirichlet(1), &closed).unwrap();
        assert!(rep.valid && rep.note.is_some());
    }

    #[test]
    fn rejected_path_has_no_transport() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let b = BundleSpec::trivial_scalar();
        let bop = BoundaryOperator::dirichlet(1);
        let path = trace_reflected(&g, &v(0.5, 0.0), &v(100.0, 0.0), 1.0, 2).unwrap();
        assert!(matches!(transport_path(&b, &bop, &g, &path), Err(Error::RejectedPath(_))));
    }

    #[test]
    fn bundle_validation_rejects_bad_alpha() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let b = BundleSpec {
            rank: 1,
            scalar: FieldScalar::Real,
            connection: Connection::Zero,
            potential: Potential::Constant { value: 2.0 },
            alpha: 1.0,
        };
        assert!(b.validate(&g).is_err());
    }
}
