//! Exact model manifolds: point classification, inward normals, the boundary
//! reflection map, closed-form geodesic advancement and first-boundary-hit
//! detection.
//!
//! Coordinates are chart-specific: `Interval`, `Disk` and `ImplicitPlanar`
//! use ambient Cartesian coordinates, `Circle` an angle in `[0, 2π)`,
//! `FlatTorus` fundamental-domain coordinates and `Sphere` ambient 3-vectors
//! of length `radius`. Unused trailing components of a [`V3`] are zero.

use nalgebra::Vector3;

use crate::{Error, Result};

/// Chart coordinates / tangent vectors. Only the first `dim` components (or
/// all three for the sphere) are meaningful.
pub type V3 = Vector3<f64>;

pub const TAU: f64 = std::f64::consts::TAU;

/// Default boundary root tolerance for models with closed-form hit equations.
pub const HIT_TOLERANCE_ANALYTIC: f64 = 1e-12;
/// Default boundary root tolerance for implicit level-set domains.
pub const HIT_TOLERANCE_IMPLICIT: f64 = 1e-10;
/// Hits with incidence cosine below this are classified as grazing.
pub const GRAZING_THRESHOLD: f64 = 1e-8;

/// Planar level-set domains `{f > 0}`, selectable by name in configs.
#[derive(Clone, Debug, PartialEq)]
pub enum LevelSet {
    /// `f(x, y) = 1 - (x/rx)^2 - (y/ry)^2`.
    Ellipse { rx: f64, ry: f64 },
    /// Axis-aligned square of half-width `h`: `f(x, y) = h - max(|x|, |y|)`.
    /// The four vertices form the declared corner set.
    Square { half_width: f64 },
}

impl LevelSet {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            LevelSet::Ellipse { rx, ry } => 1.0 - (x / rx).powi(2) - (y / ry).powi(2),
            LevelSet::Square { half_width } => half_width - x.abs().max(y.abs()),
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            LevelSet::Ellipse { rx, ry } => (-2.0 * x / (rx * rx), -2.0 * y / (ry * ry)),
            LevelSet::Square { half_width: _ } => {
                if x.abs() >= y.abs() {
                    (-x.signum(), 0.0)
                } else {
                    (0.0, -y.signum())
                }
            }
        }
    }

    pub fn characteristic_size(&self) -> f64 {
        match *self {
            LevelSet::Ellipse { rx, ry } => rx.min(ry),
            LevelSet::Square { half_width } => half_width,
        }
    }

    /// Declared corner set (points where the boundary is not smooth).
    pub fn corners(&self) -> Vec<V3> {
        match *self {
            LevelSet::Ellipse { .. } => Vec::new(),
            LevelSet::Square { half_width: h } => vec![
                V3::new(h, h, 0.0),
                V3::new(h, -h, 0.0),
                V3::new(-h, h, 0.0),
                V3::new(-h, -h, 0.0),
            ],
        }
    }

    /// Axis-aligned bounding box `(xmin, xmax, ymin, ymax)` of the domain.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        match *self {
            LevelSet::Ellipse { rx, ry } => (-rx, rx, -ry, ry),
            LevelSet::Square { half_width: h } => (-h, h, -h, h),
        }
    }
}

/// The supported model manifolds.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Interval { a: f64, b: f64 },
    Disk { radius: f64 },
    ImplicitPlanar { level: LevelSet },
    Circle { radius: f64 },
    FlatTorus { l1: f64, l2: f64 },
    Sphere { radius: f64 },
}

/// A model manifold with its boundary-detection tolerances.
///
/// Immutable after construction; all operations are pure.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryModel {
    kind: ModelKind,
    hit_tolerance: f64,
    grazing_threshold: f64,
}

/// Classification of a point relative to the (closed) manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointClass {
    Interior,
    Boundary,
    Outside,
}

/// A point of the tangent bundle in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub position: V3,
    pub velocity: V3,
}

impl PhasePoint {
    pub fn new(position: V3, velocity: V3) -> Self {
        PhasePoint { position, velocity }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// First transversal boundary crossing of a geodesic ray.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryHit {
    /// Time of the hit, in `(0, s_max]`.
    pub time: f64,
    /// The boundary point, snapped onto the boundary.
    pub point: V3,
    /// `|<v, n>| / |v|` at the hit.
    pub incidence_cos: f64,
}

fn check_finite(x: &V3) -> Result<()> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("non-finite coordinates"))
    }
}

fn wrap_periodic(x: f64, period: f64) -> f64 {
    let y = x.rem_euclid(period);
    // rem_euclid can return the period itself when x is a tiny negative number
    if y >= period {
        y - period
    } else {
        y
    }
}

impl GeometryModel {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(format!("interval needs a < b, got [{a}, {b}]")));
        }
        Ok(Self::from_kind(ModelKind::Interval { a, b }))
    }

    pub fn disk(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("disk radius must be positive"));
        }
        Ok(Self::from_kind(ModelKind::Disk { radius }))
    }

    pub fn implicit_planar(level: LevelSet) -> Result<Self> {
        match level {
            LevelSet::Ellipse { rx, ry } if rx > 0.0 && ry > 0.0 => {}
            LevelSet::Square { half_width } if half_width > 0.0 => {}
            _ => return Err(Error::invalid("level-set parameters must be positive")),
        }
        let model = Self::from_kind(ModelKind::ImplicitPlanar { level });
        // the level set must be nondegenerate along the boundary
        for i in 0..64 {
            let p = model.boundary_point((i as f64 + 0.5) / 64.0)?;
            if let ModelKind::ImplicitPlanar { level } = model.kind() {
                let (gx, gy) = level.gradient(p.x, p.y);
                if (gx * gx + gy * gy).sqrt() <= 1e-8 {
                    return Err(Error::invalid("level-set gradient vanishes on the boundary"));
                }
            }
        }
        Ok(model)
    }

    pub fn circle(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("circle radius must be positive"));
        }
        Ok(Self::from_kind(ModelKind::Circle { radius }))
    }

    pub fn flat_torus(l1: f64, l2: f64) -> Result<Self> {
        if !(l1 > 0.0 && l2 > 0.0 && l1.is_finite() && l2.is_finite()) {
            return Err(Error::invalid("torus periods must be positive"));
        }
        Ok(Self::from_kind(ModelKind::FlatTorus { l1, l2 }))
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("sphere radius must be positive"));
        }
        Ok(Self::from_kind(ModelKind::Sphere { radius }))
    }

    fn from_kind(kind: ModelKind) -> Self {
        let hit_tolerance = match kind {
            ModelKind::ImplicitPlanar { .. } => HIT_TOLERANCE_IMPLICIT,
            _ => HIT_TOLERANCE_ANALYTIC,
        };
        GeometryModel { kind, hit_tolerance, grazing_threshold: GRAZING_THRESHOLD }
    }

    pub fn with_hit_tolerance(mut self, tol: f64) -> Self {
        self.hit_tolerance = tol;
        self
    }

    pub fn with_grazing_threshold(mut self, thr: f64) -> Self {
        self.grazing_threshold = thr;
        self
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn hit_tolerance(&self) -> f64 {
        self.hit_tolerance
    }

    pub fn grazing_threshold(&self) -> f64 {
        self.grazing_threshold
    }

    /// Intrinsic dimension (1 or 2).
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::Interval { .. } | ModelKind::Circle { .. } => 1,
            _ => 2,
        }
    }

    pub fn has_boundary(&self) -> bool {
        matches!(
            self.kind,
            ModelKind::Interval { .. } | ModelKind::Disk { .. } | ModelKind::ImplicitPlanar { .. }
        )
    }

    /// Wrap a position into the fundamental chart (no-op for non-periodic models).
    pub fn wrap(&self, x: &V3) -> V3 {
        match self.kind {
            ModelKind::Circle { .. } => V3::new(wrap_periodic(x.x, TAU), 0.0, 0.0),
            ModelKind::FlatTorus { l1, l2 } => {
                V3::new(wrap_periodic(x.x, l1), wrap_periodic(x.y, l2), 0.0)
            }
            _ => *x,
        }
    }

    /// Classify a point as interior, boundary or outside the closed manifold.
    pub fn classify_point(&self, x: &V3) -> Result<PointClass> {
        check_finite(x)?;
        let tol = self.hit_tolerance;
        let class_from_inside_distance = |d: f64| {
            if d < -tol {
                PointClass::Outside
            } else if d <= tol {
                PointClass::Boundary
            } else {
                PointClass::Interior
            }
        };
        Ok(match self.kind {
            ModelKind::Interval { a, b } => class_from_inside_distance((x.x - a).min(b - x.x)),
            ModelKind::Disk { radius } => {
                class_from_inside_distance(radius - (x.x * x.x + x.y * x.y).sqrt())
            }
            ModelKind::ImplicitPlanar { ref level } => {
                class_from_inside_distance(level.value(x.x, x.y))
            }
            ModelKind::Circle { .. } | ModelKind::FlatTorus { .. } => PointClass::Interior,
            ModelKind::Sphere { radius } => {
                if ((x.norm() - radius) / radius).abs() <= 1e-12_f64.max(tol / radius) {
                    PointClass::Interior
                } else {
                    PointClass::Outside
                }
            }
        })
    }

    /// Unit normal at a boundary point, pointing into the interior.
    pub fn inward_normal(&self, x: &V3) -> Result<V3> {
        if !self.has_boundary() {
            return Err(Error::unsupported("inward normal on a closed model"));
        }
        if self.classify_point(x)? != PointClass::Boundary {
            return Err(Error::domain("inward normal requested off the boundary"));
        }
        Ok(match self.kind {
            ModelKind::Interval { a, b } => {
                if (x.x - a).abs() <= (b - x.x).abs() {
                    V3::new(1.0, 0.0, 0.0)
                } else {
                    V3::new(-1.0, 0.0, 0.0)
                }
            }
            ModelKind::Disk { .. } => {
                let n = (x.x * x.x + x.y * x.y).sqrt();
                V3::new(-x.x / n, -x.y / n, 0.0)
            }
            ModelKind::ImplicitPlanar { ref level } => {
                let (gx, gy) = level.gradient(x.x, x.y);
                let n = (gx * gx + gy * gy).sqrt();
                V3::new(gx / n, gy / n, 0.0)
            }
            _ => unreachable!(),
        })
    }

    /// Reflection at the boundary tangent plane: `v - 2 <v, n> n`.
    pub fn reflect(&self, x: &V3, v: &V3) -> Result<V3> {
        let n = self.inward_normal(x)?;
        Ok(v - 2.0 * v.dot(&n) * n)
    }

    /// Advance along the geodesic through `p` for duration `s`.
    ///
    /// The caller guarantees that boundary models are not crossed in `(0, s)`.
    pub fn geodesic_advance(&self, p: &PhasePoint, s: f64) -> Result<PhasePoint> {
        if !(s >= 0.0) {
            return Err(Error::invalid("geodesic duration must be nonnegative"));
        }
        Ok(match self.kind {
            ModelKind::Interval { .. } | ModelKind::Disk { .. } | ModelKind::ImplicitPlanar { .. } => {
                PhasePoint::new(p.position + s * p.velocity, p.velocity)
            }
            ModelKind::Circle { radius } => {
                let theta = wrap_periodic(p.position.x + s * p.velocity.x / radius, TAU);
                PhasePoint::new(V3::new(theta, 0.0, 0.0), p.velocity)
            }
            ModelKind::FlatTorus { .. } => {
                PhasePoint::new(self.wrap(&(p.position + s * p.velocity)), p.velocity)
            }
            ModelKind::Sphere { radius } => {
                let speed = p.velocity.norm();
                if speed == 0.0 {
                    return Ok(*p);
                }
                let xhat = p.position / p.position.norm();
                let vhat = p.velocity / speed;
                let phi = speed * s / radius;
                let (sin_phi, cos_phi) = phi.sin_cos();
                let new_x = radius * (cos_phi * xhat + sin_phi * vhat);
                let mut new_v = speed * (-sin_phi * xhat + cos_phi * vhat);
                // keep the on-sphere and tangency invariants from drifting
                // over long compositions
                new_v -= (new_v.dot(&new_x) / new_x.norm_squared()) * new_x;
                new_v *= speed / new_v.norm();
                PhasePoint::new(new_x, new_v)
            }
        })
    }

    /// First transversal boundary crossing within `(0, s_max]`, if any.
    ///
    /// Roots are closed-form for `Interval` and `Disk`; implicit domains
    /// march with anti-tunneling substeps and bisect the bracket.
    pub fn first_boundary_hit(&self, p: &PhasePoint, s_max: f64) -> Result<Option<BoundaryHit>> {
        if !(s_max > 0.0) {
            return Err(Error::invalid("s_max must be positive"));
        }
        if self.classify_point(&p.position)? == PointClass::Outside {
            return Err(Error::domain("phase point outside the closed manifold"));
        }
        if !self.has_boundary() {
            return Ok(None);
        }
        let speed = p.velocity.norm();
        if speed == 0.0 {
            return Ok(None);
        }
        // roots closer than one tolerance of travel are the departure point
        let min_time = self.hit_tolerance / speed;
        match self.kind {
            ModelKind::Interval { a, b } => {
                let (x, v) = (p.position.x, p.velocity.x);
                let (t, endpoint) = if v > 0.0 { ((b - x) / v, b) } else { ((a - x) / v, a) };
                if t > min_time && t <= s_max {
                    Ok(Some(BoundaryHit {
                        time: t,
                        point: V3::new(endpoint, 0.0, 0.0),
                        incidence_cos: 1.0,
                    }))
                } else {
                    Ok(None)
                }
            }
            ModelKind::Disk { radius } => {
                let a2 = p.velocity.norm_squared();
                let a1 = 2.0 * p.position.dot(&p.velocity);
                let a0 = p.position.norm_squared() - radius * radius;
                let disc = a1 * a1 - 4.0 * a2 * a0;
                if disc <= 0.0 {
                    return Ok(None);
                }
                let sq = disc.sqrt();
                let q = -0.5 * (a1 + a1.signum() * sq);
                let mut roots = [q / a2, if q != 0.0 { a0 / q } else { f64::INFINITY }];
                roots.sort_by(|p, q| p.partial_cmp(q).unwrap());
                let t = match roots.iter().find(|&&t| t > min_time && t <= s_max) {
                    Some(&t) => t,
                    None => return Ok(None),
                };
                let raw = p.position + t * p.velocity;
                let point = raw * (radius / raw.norm());
                let n = -point / radius;
                Ok(Some(BoundaryHit {
                    time: t,
                    point,
                    incidence_cos: (p.velocity.dot(&n) / speed).abs(),
                }))
            }
            ModelKind::ImplicitPlanar { ref level } => {
                self.implicit_hit(level, p, s_max, speed, min_time)
            }
            _ => unreachable!(),
        }
    }

    fn implicit_hit(
        &self,
        level: &LevelSet,
        p: &PhasePoint,
        s_max: f64,
        speed: f64,
        min_time: f64,
    ) -> Result<Option<BoundaryHit>> {
        let f_at = |s: f64| {
            let q = p.position + s * p.velocity;
            level.value(q.x, q.y)
        };
        // substep length bounds the chance of tunneling through thin features
        let step_len = self.hit_tolerance.sqrt() * level.characteristic_size();
        let ds = (step_len / speed).min(s_max);
        let mut s_prev = 0.0;
        let mut f_prev = f_at(0.0);
        loop {
            let s_next = (s_prev + ds).min(s_max);
            let f_next = f_at(s_next);
            if f_next < 0.0 && f_prev >= 0.0 && s_next > min_time {
                // bracketed crossing: bisect the bracket down to a fraction
                // of the tolerance so corner proximity stays meaningful
                let (mut lo, mut hi) = (s_prev, s_next);
                while hi - lo > 0.25 * min_time {
                    let mid = 0.5 * (lo + hi);
                    if f_at(mid) >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let t = 0.5 * (lo + hi);
                let point = p.position + t * p.velocity;
                let (gx, gy) = level.gradient(point.x, point.y);
                let gn = (gx * gx + gy * gy).sqrt();
                let n = V3::new(gx / gn, gy / gn, 0.0);
                return Ok(Some(BoundaryHit {
                    time: t,
                    point,
                    incidence_cos: (p.velocity.dot(&n) / speed).abs(),
                }));
            }
            if s_next >= s_max {
                return Ok(None);
            }
            s_prev = s_next;
            f_prev = f_next;
        }
    }

    /// An orthonormal tangent frame at `x`; only the first `dim()` entries
    /// are meaningful (the second is zero for 1-D models).
    pub fn tangent_basis(&self, x: &V3) -> [V3; 2] {
        match self.kind {
            ModelKind::Interval { .. } | ModelKind::Circle { .. } => {
                [V3::new(1.0, 0.0, 0.0), V3::zeros()]
            }
            ModelKind::Disk { .. } | ModelKind::ImplicitPlanar { .. } | ModelKind::FlatTorus { .. } => {
                [V3::new(1.0, 0.0, 0.0), V3::new(0.0, 1.0, 0.0)]
            }
            ModelKind::Sphere { .. } => {
                let xhat = x / x.norm();
                let pick = if xhat.z.abs() < 0.9 {
                    V3::new(0.0, 0.0, 1.0)
                } else {
                    V3::new(1.0, 0.0, 0.0)
                };
                let e1 = xhat.cross(&pick).normalize();
                let e2 = xhat.cross(&e1).normalize();
                [e1, e2]
            }
        }
    }

    /// A boundary point parametrized by `u ∈ [0, 1)`.
    pub fn boundary_point(&self, u: f64) -> Result<V3> {
        match self.kind {
            ModelKind::Interval { a, b } => Ok(V3::new(if u < 0.5 { a } else { b }, 0.0, 0.0)),
            ModelKind::Disk { radius } => {
                let th = TAU * u;
                Ok(V3::new(radius * th.cos(), radius * th.sin(), 0.0))
            }
            ModelKind::ImplicitPlanar { ref level } => {
                // walk outward along the ray at angle 2πu until f crosses zero
                let th = TAU * u;
                let (c, s) = (th.cos(), th.sin());
                let mut lo = 0.0;
                let mut hi = match *level {
                    LevelSet::Ellipse { rx, ry } => 2.0 * rx.max(ry),
                    LevelSet::Square { half_width } => 2.0 * half_width,
                };
                debug_assert!(level.value(hi * c, hi * s) < 0.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if level.value(mid * c, mid * s) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let r = 0.5 * (lo + hi);
                Ok(V3::new(r * c, r * s, 0.0))
            }
            _ => Err(Error::unsupported("boundary point on a closed model")),
        }
    }

    /// Validate the phase-point invariants for this model.
    pub fn validate_phase(&self, p: &PhasePoint) -> Result<()> {
        check_finite(&p.position)?;
        check_finite(&p.velocity)?;
        if self.classify_point(&p.position)? == PointClass::Outside {
            return Err(Error::domain("position outside the closed manifold"));
        }
        if let ModelKind::Sphere { radius } = self.kind {
            let speed = p.velocity.norm();
            if speed > 0.0 {
                let rel = p.position.dot(&p.velocity).abs() / (radius * speed);
                if rel > 1e-10 {
                    return Err(Error::domain("sphere velocity not tangent"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64) -> V3 {
        V3::new(x, y, 0.0)
    }

    #[test]
    fn classify_interval_and_disk() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        assert_eq!(g.classify_point(&v(0.5, 0.0)).unwrap(), PointClass::Interior);
        assert_eq!(g.classify_point(&v(1.0, 0.0)).unwrap(), PointClass::Boundary);
        let d = GeometryModel::disk(1.0).unwrap();
        assert_eq!(d.classify_point(&v(2.0, 0.0)).unwrap(), PointClass::Outside);
        assert!(d.classify_point(&v(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn inward_normals() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        assert_eq!(g.inward_normal(&v(0.0, 0.0)).unwrap(), v(1.0, 0.0));
        assert_eq!(g.inward_normal(&v(1.0, 0.0)).unwrap(), v(-1.0, 0.0));
        let d = GeometryModel::disk(1.0).unwrap();
        assert_relative_eq!(d.inward_normal(&v(1.0, 0.0)).unwrap(), v(-1.0, 0.0), epsilon = 1e-14);
        assert!(d.inward_normal(&v(0.2, 0.0)).is_err());
        let c = GeometryModel::circle(1.0).unwrap();
        assert!(matches!(c.inward_normal(&v(0.0, 0.0)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn reflection_examples() {
        let d = GeometryModel::disk(1.0).unwrap();
        // n = (0,-1) at the top of the disk
        let r = d.reflect(&v(0.0, 1.0), &v(1.0, -2.0)).unwrap();
        assert_relative_eq!(r, v(1.0, 2.0), epsilon = 1e-12);
        // tangential vectors are fixed points
        let t = d.reflect(&v(0.0, 1.0), &v(3.0, 0.0)).unwrap();
        assert_relative_eq!(t, v(3.0, 0.0), epsilon = 1e-12);
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let r = g.reflect(&v(1.0, 0.0), &v(0.7, 0.0)).unwrap();
        assert_relative_eq!(r.x, -0.7, epsilon = 1e-14);
    }

    #[test]
    fn reflection_is_involutive_isometry() {
        // 1000 random boundary points and vectors per boundary model
        let models = [
            GeometryModel::interval(0.0, 1.0).unwrap(),
            GeometryModel::disk(1.0).unwrap(),
            GeometryModel::implicit_planar(LevelSet::Ellipse { rx: 1.0, ry: 0.6 }).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in &models {
            for _ in 0..1000 {
                let x = g.boundary_point(rng.gen()).unwrap();
                let w = v(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 4.0;
                let r = g.reflect(&x, &w).unwrap();
                let rr = g.reflect(&x, &r).unwrap();
                assert!((rr - w).norm() <= 1e-12);
                assert!((r.norm() - w.norm()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn advance_circle_torus() {
        let c = GeometryModel::circle(1.0).unwrap();
        let p = c
            .geodesic_advance(&PhasePoint::new(v(0.0, 0.0), v(1.0, 0.0)), std::f64::consts::PI)
            .unwrap();
        assert_relative_eq!(p.position.x, std::f64::consts::PI, epsilon = 1e-12);
        assert_eq!(p.velocity.x, 1.0);

        let t = GeometryModel::flat_torus(1.0, 1.0).unwrap();
        let p = t.geodesic_advance(&PhasePoint::new(v(0.9, 0.0), v(1.0, 0.0)), 0.2).unwrap();
        assert_relative_eq!(p.position.x, 0.1, epsilon = 1e-12);

        assert!(c.geodesic_advance(&PhasePoint::new(v(0.0, 0.0), v(1.0, 0.0)), -0.1).is_err());
    }

    #[test]
    fn advance_sphere_north_pole() {
        // derived from the explicit great-circle rotation matrix: a quarter
        // turn from the north pole towards +x lands on the equator with the
        // velocity pointing south
        let s = GeometryModel::sphere(1.0).unwrap();
        let p = PhasePoint::new(V3::new(0.0, 0.0, 1.0), V3::new(1.0, 0.0, 0.0));
        let q = s.geodesic_advance(&p, std::f64::consts::FRAC_PI_2).unwrap();
        assert_relative_eq!(q.position, V3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(q.velocity, V3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_relative_eq!(q.speed(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_invariants_over_many_steps() {
        let s = GeometryModel::sphere(1.0).unwrap();
        let mut p = PhasePoint::new(
            V3::new(0.6, 0.8, 0.0).normalize(),
            V3::new(-0.8, 0.6, 0.0) * 1.3,
        );
        let speed0 = p.speed();
        for _ in 0..10_000 {
            p = s.geodesic_advance(&p, 0.0137).unwrap();
        }
        assert!((p.position.norm() - 1.0).abs() <= 1e-10);
        assert!(p.position.dot(&p.velocity).abs() / p.speed() <= 1e-10);
        assert!((p.speed() - speed0).abs() / speed0 <= 1e-12);
    }

    #[test]
    fn first_hit_interval_and_disk() {
        let g = GeometryModel::interval(0.0, 1.0).unwrap();
        let hit = g
            .first_boundary_hit(&PhasePoint::new(v(0.3, 0.0), v(1.0, 0.0)), 2.0)
            .unwrap()
            .unwrap();
        assert_relative_eq!(hit.time, 0.7, epsilon = 1e-14);
        assert_eq!(hit.point.x, 1.0);
        assert_eq!(hit.incidence_cos, 1.0);

        let d = GeometryModel::disk(1.0).unwrap();
        let hit = d
            .first_boundary_hit(&PhasePoint::new(v(0.0, 0.0), v(1.0, 0.0)), 2.0)
            .unwrap()
            .unwrap();
        assert_relative_eq!(hit.time, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hit.point, v(1.0, 0.0), epsilon = 1e-12);

        // no hit when the segment stays interior
        assert!(d
            .first_boundary_hit(&PhasePoint::new(v(0.0, 0.0), v(1.0, 0.0)), 0.5)
            .unwrap()
            .is_none());
    }

    /// Bisection oracle for the disk crossing time of a ray known to exit.
    fn disk_hit_bisection(radius: f64, p: &PhasePoint, hi0: f64) -> f64 {
        let out = |t: f64| (p.position + t * p.velocity).norm() - radius;
        let (mut lo, mut hi) = (0.0, hi0);
        assert!(out(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if out(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn first_hit_disk_off_center() {
        let d = GeometryModel::disk(1.0).unwrap();
        let p = PhasePoint::new(v(0.5, 0.0), v(0.0, 1.0));
        let hit = d.first_boundary_hit(&p, 2.0).unwrap().unwrap();
        let expected = (1.0_f64 - 0.25).sqrt(); // 0.8660254
        assert_relative_eq!(hit.time, expected, epsilon = 1e-12);
        assert_relative_eq!(hit.point, v(0.5, expected), epsilon = 1e-12);
        assert_relative_eq!(hit.incidence_cos, expected, epsilon = 1e-12);
        // cross-check the quadratic against a bisection oracle
        assert_relative_eq!(hit.time, disk_hit_bisection(1.0, &p, 2.0), epsilon = 1e-10);
    }

    #[test]
    fn first_hit_implicit_matches_disk() {
        // the unit-circle ellipse must agree with the analytic disk roots
        let d = GeometryModel::disk(1.0).unwrap();
        let e = GeometryModel::implicit_planar(LevelSet::Ellipse { rx: 1.0, ry: 1.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = v(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let dir = v(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            if dir.norm() < 0.3 {
                continue;
            }
            let p = PhasePoint::new(x * 0.8, dir);
            let a = d.first_boundary_hit(&p, 20.0).unwrap().unwrap();
            let b = e.first_boundary_hit(&p, 20.0).unwrap().unwrap();
            assert!((a.time - b.time).abs() < 1e-8, "{} vs {}", a.time, b.time);
            assert!((a.incidence_cos - b.incidence_cos).abs() < 1e-6);
        }
    }

    #[test]
    fn hit_consistency_random() {
        // advancing to the hit time lands on the boundary; stopping just
        // short stays interior
        let models = [
            GeometryModel::interval(0.0, 1.0).unwrap(),
            GeometryModel::disk(1.0).unwrap(),
            GeometryModel::implicit_planar(LevelSet::Ellipse { rx: 1.2, ry: 0.7 }).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in &models {
            let mut checked = 0;
            while checked < 300 {
                let x = match g.kind() {
                    ModelKind::Interval { a, b } => v(a + (b - a) * rng.gen::<f64>(), 0.0),
                    _ => {
                        let q = v(2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0);
                        if g.classify_point(&q).unwrap() != PointClass::Interior {
                            continue;
                        }
                        q
                    }
                };
                let dir = v(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                if dir.norm() < 0.3 {
                    continue;
                }
                let p = PhasePoint::new(x, dir);
                if let Some(hit) = g.first_boundary_hit(&p, 20.0).unwrap() {
                    let at_hit = g.geodesic_advance(&p, hit.time).unwrap();
                    assert_eq!(
                        g.classify_point(&at_hit.position).unwrap(),
                        PointClass::Boundary,
                        "hit point should be within tolerance of the boundary"
                    );
                    let short = g.geodesic_advance(&p, hit.time * (1.0 - 1e-6)).unwrap();
                    assert_ne!(g.classify_point(&short.position).unwrap(), PointClass::Outside);
                    checked += 1;
                }
            }
        }
    }

    #[test]
    fn phase_validation() {
        let s = GeometryModel::sphere(1.0).unwrap();
        let ok = PhasePoint::new(V3::new(0.0, 0.0, 1.0), V3::new(1.0, 0.0, 0.0));
        assert!(s.validate_phase(&ok).is_ok());
        let skew = PhasePoint::new(V3::new(0.0, 0.0, 1.0), V3::new(1.0, 0.0, 0.5));
        assert!(s.validate_phase(&skew).is_err());
        let off = PhasePoint::new(V3::new(0.0, 0.0, 1.5), V3::new(1.0, 0.0, 0.0));
        assert!(s.validate_phase(&off).is_err());

        let d = GeometryModel::disk(1.0).unwrap();
        assert!(d.validate_phase(&PhasePoint::new(v(0.3, 0.1), v(1.0, 0.0))).is_ok());
        assert!(d.validate_phase(&PhasePoint::new(v(1.5, 0.0), v(1.0, 0.0))).is_err());
    }

    #[test]
    fn boundary_points_lie_on_boundary() {
        let g = GeometryModel::implicit_planar(LevelSet::Square { half_width: 1.0 }).unwrap();
        for i in 0..32 {
            let x = g.boundary_point(i as f64 / 32.0).unwrap();
            assert_ne!(g.classify_point(&x).unwrap(), PointClass::Interior);
        }
    }
}
