//! The sliced heat operator: Gaussian velocity sampling per partition
//! segment, Monte Carlo estimation along reflected paths with inverse
//! transport weights, a deterministic 1-D quadrature mode, and the
//! infinitesimal-generator probe.
//!
//! Sampling follows the discretized path-space volume: over a segment of
//! length `Δτ` the velocity components are independent centered Gaussians of
//! variance `2/Δτ`, making the density `(Δτ/4π)^{n/2} e^{-Δτ|v|²/4}` a
//! probability. With that choice the kinetic weight and normalization are
//! absorbed exactly and the estimator is the plain mean of
//! `transport⁻¹ · u(endpoint)`. Sign convention: `L = -(Σ ∂²) + V` in the
//! flat trivialization, so `e^{-tL}` is smoothing.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::billiard::{default_reflection_cap, trace_with, PathStatus, TraceStep};
use crate::bundle::{
    inverse_segment_matrix, operator_norm, scalar_segment_exponent, BoundaryOperator, BundleSpec,
    CMatrix, CVector,
};
use crate::geometry::{GeometryModel, ModelKind, PointClass, V3};
use crate::{Error, Result};

/// Largest rank served by the allocation-free componentwise kernel.
const MAX_DIAG_RANK: usize = 8;

/// Samples per reduction chunk; fixed so the reduction order (and therefore
/// the bits of the result) cannot depend on the worker count.
const CHUNK: u64 = 1024;

/// A time grid `0 = τ_0 < τ_1 < … < τ_N = t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::invalid("partition must start at 0 and have N ≥ 1 segments"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("partition times must be strictly increasing"));
        }
        Ok(Partition { times })
    }

    /// The uniform partition of `[0, t]` into `n` segments.
    pub fn uniform(t: f64, n: usize) -> Result<Self> {
        if !(t > 0.0) || n == 0 {
            return Err(Error::invalid("uniform partition needs t > 0 and n ≥ 1"));
        }
        Partition::new((0..=n).map(|j| t * j as f64 / n as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn total_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Number of segments `N`.
    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    /// The mesh `|τ| = max Δ_j τ`.
    pub fn mesh(&self) -> f64 {
        self.deltas().fold(0.0, f64::max)
    }
}

/// Section registry: evaluation rules selectable by name, with exact
/// sup-norms and (where defined) known eigenvalues on the model problems.
#[derive(Clone, Debug, PartialEq)]
pub enum SectionKind {
    /// Constant k-vector.
    Constant { values: Vec<f64> },
    /// `sin(m π (x - a) / (b - a))` on the interval.
    SineMode { mode: u32 },
    /// `cos(m π (x - a) / (b - a))` on the interval.
    CosineMode { mode: u32 },
    /// `e^{i m θ}` on the circle.
    FourierMode { mode: i32 },
    /// Degree-one harmonic `(c · p) / radius` on the sphere.
    SphereBand { coeffs: [f64; 3] },
    /// `cos(2π (k1 x / L1 + k2 y / L2))` on the torus.
    TorusCosMode { k1: i32, k2: i32 },
    /// Values on a uniform grid over `[a, b]`, interpolated cubically
    /// (finite-difference reference output).
    Grid1d { a: f64, b: f64, values: Vec<f64> },
}

/// A section of the bundle: an evaluation rule with a declared sup-norm.
/// Evolved oracle sections are represented as scaled registry sections.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSection {
    pub kind: SectionKind,
    pub scale: Complex64,
}

impl FieldSection {
    pub fn new(kind: SectionKind) -> Self {
        FieldSection { kind, scale: Complex64::new(1.0, 0.0) }
    }

    pub fn scaled(&self, z: Complex64) -> Self {
        FieldSection { kind: self.kind.clone(), scale: self.scale * z }
    }

    /// Number of components of the section values.
    pub fn rank(&self) -> usize {
        match &self.kind {
            SectionKind::Constant { values } => values.len(),
            _ => 1,
        }
    }

    /// Sup over the manifold of the pointwise value norm.
    pub fn sup_norm(&self) -> f64 {
        let base = match &self.kind {
            SectionKind::Constant { values } => {
                values.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            SectionKind::SineMode { .. }
            | SectionKind::CosineMode { .. }
            | SectionKind::FourierMode { .. }
            | SectionKind::TorusCosMode { .. } => 1.0,
            SectionKind::SphereBand { coeffs } => {
                (coeffs[0].powi(2) + coeffs[1].powi(2) + coeffs[2].powi(2)).sqrt()
            }
            SectionKind::Grid1d { values, .. } => {
                values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            }
        };
        base * self.scale.norm()
    }

    pub fn validate_for(&self, g: &GeometryModel) -> Result<()> {
        let ok = match (&self.kind, g.kind()) {
            (SectionKind::Constant { values }, _) => !values.is_empty(),
            (SectionKind::SineMode { mode }, ModelKind::Interval { .. })
            | (SectionKind::CosineMode { mode }, ModelKind::Interval { .. }) => *mode >= 1,
            (SectionKind::FourierMode { .. }, ModelKind::Circle { .. }) => true,
            (SectionKind::SphereBand { .. }, ModelKind::Sphere { .. }) => true,
            (SectionKind::TorusCosMode { .. }, ModelKind::FlatTorus { .. }) => true,
            (SectionKind::Grid1d { a, b, values }, ModelKind::Interval { .. }) => {
                b > a && values.len() >= 4
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("section incompatible with this geometry"))
        }
    }

    /// Evaluate into `out` (length = rank).
    pub fn eval_into(&self, g: &GeometryModel, x: &V3, out: &mut [Complex64]) {
        match (&self.kind, g.kind()) {
            (SectionKind::Constant { values }, _) => {
                for (o, v) in out.iter_mut().zip(values) {
                    *o = self.scale * *v;
                }
            }
            (SectionKind::SineMode { mode }, ModelKind::Interval { a, b }) => {
                let s = (*mode as f64 * std::f64::consts::PI * (x.x - a) / (b - a)).sin();
                out[0] = self.scale * s;
            }
            (SectionKind::CosineMode { mode }, ModelKind::Interval { a, b }) => {
                let c = (*mode as f64 * std::f64::consts::PI * (x.x - a) / (b - a)).cos();
                out[0] = self.scale * c;
            }
            (SectionKind::FourierMode { mode }, ModelKind::Circle { .. }) => {
                out[0] = self.scale * Complex64::new(0.0, *mode as f64 * x.x).exp();
            }
            (SectionKind::SphereBand { coeffs }, ModelKind::Sphere { radius }) => {
                let s = (coeffs[0] * x.x + coeffs[1] * x.y + coeffs[2] * x.z) / radius;
                out[0] = self.scale * s;
            }
            (SectionKind::TorusCosMode { k1, k2 }, ModelKind::FlatTorus { l1, l2 }) => {
                let phase = crate::geometry::TAU * (*k1 as f64 * x.x / l1 + *k2 as f64 * x.y / l2);
                out[0] = self.scale * phase.cos();
            }
            (SectionKind::Grid1d { a, b, values }, _) => {
                out[0] = self.scale * grid_interp(*a, *b, values, x.x);
            }
            _ => {
                // validate_for rejects these combinations up front
                for o in out.iter_mut() {
                    *o = Complex64::new(f64::NAN, 0.0);
                }
            }
        }
    }
}

/// 4-point Lagrange interpolation on a uniform grid.
fn grid_interp(a: f64, b: f64, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let h = (b - a) / (n - 1) as f64;
    let u = ((x - a) / h).clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).clamp(1, n - 3);
    let t = u - i as f64;
    let (ym1, y0, y1, y2) = (values[i - 1], values[i], values[i + 1], values[i + 2]);
    // cubic through the four surrounding nodes
    ym1 * (-t * (t - 1.0) * (t - 2.0) / 6.0)
        + y0 * ((t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0)
        + y1 * (-(t + 1.0) * t * (t - 2.0) / 2.0)
        + y2 * ((t + 1.0) * t * (t - 1.0) / 6.0)
}

/// One heat problem: geometry, bundle, boundary operator and initial section.
#[derive(Clone, Debug)]
pub struct HeatProblem {
    pub geometry: GeometryModel,
    pub bundle: BundleSpec,
    pub boundary: BoundaryOperator,
    pub section: FieldSection,
}

impl HeatProblem {
    pub fn validate(&self) -> Result<()> {
        self.bundle.validate(&self.geometry)?;
        self.section.validate_for(&self.geometry)?;
        if self.boundary.rank() != self.bundle.rank {
            return Err(Error::invalid("boundary operator rank mismatch"));
        }
        if self.section.rank() != self.bundle.rank {
            return Err(Error::invalid("section rank must match the bundle rank"));
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the sliced operator applied to the section at one
/// point.
#[derive(Clone, Debug)]
pub struct SliceEstimate {
    /// Componentwise estimate of `P_τ u(x)`.
    pub value: Vec<Complex64>,
    /// Per-component standard error `sqrt((Var_re + Var_im) / n)`.
    pub stderr: Vec<f64>,
    pub samples_used: u64,
    pub rejected: u64,
    pub seed: u64,
    /// Set when more than 1% of samples were rejected.
    pub high_rejection: bool,
    /// Largest inverse-transport operator norm seen across samples.
    pub max_weight_norm: f64,
}

impl SliceEstimate {
    pub fn value_norm(&self) -> f64 {
        self.value.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Estimation options.
#[derive(Clone, Copy, Debug, Default)]
pub struct EstimateOptions {
    /// Pair each first-segment draw `v` with its reflection `Rv` at
    /// boundary starts, realizing the two path decorations exactly. Off the
    /// boundary this is a no-op.
    pub antithetic: bool,
}

/// Draw one segment velocity: `dim` independent components of variance
/// `2/Δτ` along the coordinate axes.
pub fn sample_segment_velocity<R: Rng + ?Sized>(
    dim: usize,
    delta_tau: f64,
    rng: &mut R,
) -> Result<V3> {
    if !(delta_tau > 0.0) {
        return Err(Error::invalid("segment length must be positive"));
    }
    let sigma = (2.0 / delta_tau).sqrt();
    let mut v = V3::zeros();
    for i in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        v[i] = sigma * z;
    }
    Ok(v)
}

/// Segment velocity in the tangent frame at `x` (equals the axis-aligned
/// draw on flat charts; maps through an orthonormal basis on the sphere).
fn draw_tangent_velocity<R: Rng + ?Sized>(
    g: &GeometryModel,
    x: &V3,
    delta_tau: f64,
    rng: &mut R,
) -> V3 {
    let sigma = (2.0 / delta_tau).sqrt();
    let basis = g.tangent_basis(x);
    let mut v = V3::zeros();
    for b in basis.iter().take(g.dim()) {
        let z: f64 = rng.sample(StandardNormal);
        v += sigma * z * b;
    }
    v
}

enum SampleOutcome {
    /// Weight written to the output buffer; carries the inverse-transport
    /// operator norm.
    Accepted { weight_norm: f64 },
    Rejected,
}

/// Per-sample path evaluation context, shared by the estimator, the
/// quadrature mode and the generator probe.
struct PathEvaluator<'a> {
    problem: &'a HeatProblem,
    /// Componentwise boundary signs when the problem decouples.
    diag_signs: Option<Vec<f64>>,
    /// Whether the start point lies on the boundary.
    boundary_start: bool,
    antithetic: bool,
}

impl<'a> PathEvaluator<'a> {
    fn new(problem: &'a HeatProblem, x: &V3, opts: EstimateOptions) -> Result<Self> {
        let boundary_start = problem.geometry.classify_point(x)? == PointClass::Boundary;
        let diag_signs = if problem.bundle.rank <= MAX_DIAG_RANK
            && problem.bundle.is_diagonal_with(&problem.boundary)
        {
            problem.boundary.diagonal_signs()
        } else {
            None
        };
        Ok(PathEvaluator { problem, diag_signs, boundary_start, antithetic: opts.antithetic })
    }

    /// Walk the sliced path from `x`, drawing the velocity for node `j` from
    /// `vel_at(j, position)`, and write `transport⁻¹ u(endpoint)` into
    /// `out`.
    fn evaluate(
        &self,
        x: &V3,
        partition: &Partition,
        vel_at: &mut dyn FnMut(usize, &V3) -> V3,
        out: &mut [Complex64],
    ) -> Result<SampleOutcome> {
        if let Some(signs) = &self.diag_signs {
            self.evaluate_diagonal(x, partition, vel_at, signs, out)
        } else {
            self.evaluate_matrix(x, partition, vel_at, out)
        }
    }

    fn evaluate_diagonal(
        &self,
        x: &V3,
        partition: &Partition,
        vel_at: &mut dyn FnMut(usize, &V3) -> V3,
        signs: &[f64],
        out: &mut [Complex64],
    ) -> Result<SampleOutcome> {
        let g = &self.problem.geometry;
        let b = &self.problem.bundle;
        let k = b.rank;
        let mut expo = [0.0_f64; MAX_DIAG_RANK];
        let mut sign = [1.0_f64; MAX_DIAG_RANK];
        let mut phase = 0.0_f64;
        let mut pos = *x;
        let position_dependent = b.potential_is_position_dependent();
        let mut cb_err: Option<Error> = None;

        for (j, dtau) in partition.deltas().enumerate() {
            let vel = vel_at(j, &pos);
            let cap = default_reflection_cap(dtau, vel.norm());
            let outcome = trace_with(g, &pos, &vel, dtau, cap, &mut |step| match *step {
                TraceStep::Segment { start, duration } => {
                    if cb_err.is_some() {
                        return;
                    }
                    if position_dependent {
                        for (c, e) in expo.iter_mut().enumerate().take(k) {
                            match crate::bundle::simpson_potential_component(
                                b, g, start, duration, c,
                            ) {
                                Ok(v) => *e += v,
                                Err(err) => cb_err = Some(err),
                            }
                        }
                    } else {
                        for (c, e) in expo.iter_mut().enumerate().take(k) {
                            *e += b.potential_component(c, &start.position) * duration;
                        }
                    }
                    phase += b.phase_rate(g, &start.position, &start.velocity) * duration;
                }
                TraceStep::Reflection { .. } => {
                    for (c, s) in sign.iter_mut().enumerate().take(k) {
                        *s *= signs[c];
                    }
                }
            })?;
            if let Some(err) = cb_err.take() {
                return Err(err);
            }
            if outcome.status != PathStatus::Ok {
                return Ok(SampleOutcome::Rejected);
            }
            pos = outcome.end.position;
            // interior and final nodes must stay off the boundary
            if g.classify_point(&pos)? == PointClass::Boundary {
                return Ok(SampleOutcome::Rejected);
            }
        }

        self.problem.section.eval_into(g, &pos, out);
        let mut weight_norm = 0.0_f64;
        for c in 0..k {
            // inverse of exp(∫V - i∫ω) with the commuting ±1 insertions
            let inv = Complex64::new(-expo[c], phase).exp() * sign[c];
            out[c] *= inv;
            weight_norm = weight_norm.max((-expo[c]).exp());
            if self.antithetic && self.boundary_start {
                out[c] *= 0.5 * (1.0 + signs[c]);
            }
        }
        Ok(SampleOutcome::Accepted { weight_norm })
    }

    fn evaluate_matrix(
        &self,
        x: &V3,
        partition: &Partition,
        vel_at: &mut dyn FnMut(usize, &V3) -> V3,
        out: &mut [Complex64],
    ) -> Result<SampleOutcome> {
        let g = &self.problem.geometry;
        let b = &self.problem.bundle;
        let bop = &self.problem.boundary;
        let k = b.rank;
        let mut inv = CMatrix::identity(k, k);
        let mut pos = *x;
        let mut cb_err: Option<Error> = None;

        for (j, dtau) in partition.deltas().enumerate() {
            let vel = vel_at(j, &pos);
            let cap = default_reflection_cap(dtau, vel.norm());
            let outcome = trace_with(g, &pos, &vel, dtau, cap, &mut |step| match *step {
                TraceStep::Segment { start, duration } => {
                    if cb_err.is_some() {
                        return;
                    }
                    let seg = if k == 1 {
                        scalar_segment_exponent(b, g, start, duration)
                            .map(|z| CMatrix::from_element(1, 1, (-z).exp()))
                    } else {
                        inverse_segment_matrix(b, g, start, duration)
                    };
                    match seg {
                        Ok(q) => inv = &inv * q,
                        Err(err) => cb_err = Some(err),
                    }
                }
                TraceStep::Reflection { .. } => {
                    inv = &inv * bop.matrix();
                }
            })?;
            if let Some(err) = cb_err.take() {
                return Err(err);
            }
            if outcome.status != PathStatus::Ok {
                return Ok(SampleOutcome::Rejected);
            }
            pos = outcome.end.position;
            if g.classify_point(&pos)? == PointClass::Boundary {
                return Ok(SampleOutcome::Rejected);
            }
        }

        let mut u = CVector::zeros(k);
        self.problem.section.eval_into(g, &pos, u.as_mut_slice());
        let mut w = &inv * u;
        if self.antithetic && self.boundary_start {
            let proj = (CMatrix::identity(k, k) + bop.matrix()) * Complex64::new(0.5, 0.0);
            w = &proj * w;
        }
        for (o, wi) in out.iter_mut().zip(w.iter()) {
            *o = *wi;
        }
        Ok(SampleOutcome::Accepted { weight_norm: operator_norm(&inv) })
    }
}

#[derive(Clone)]
struct ChunkStats {
    sum: Vec<Complex64>,
    sum_sq: Vec<f64>,
    used: u64,
    rejected: u64,
    max_norm: f64,
}

impl ChunkStats {
    fn zero(k: usize) -> Self {
        ChunkStats {
            sum: vec![Complex64::new(0.0, 0.0); k],
            sum_sq: vec![0.0; k],
            used: 0,
            rejected: 0,
            max_norm: 0.0,
        }
    }

    fn absorb(&mut self, other: &ChunkStats) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.used += other.used;
        self.rejected += other.rejected;
        self.max_norm = self.max_norm.max(other.max_norm);
    }
}

/// Monte Carlo estimate of `P_τ u(x)`: for every sample, per-segment
/// Gaussian velocities drive a reflected path whose accumulated inverse
/// transport weighs the endpoint value of the section. Rejected paths are
/// skipped and counted. Identical `(seed, samples)` give bit-identical
/// results for any worker count.
pub fn estimate_slice(
    problem: &HeatProblem,
    x: &V3,
    partition: &Partition,
    samples: u64,
    seed: u64,
    opts: EstimateOptions,
) -> Result<SliceEstimate> {
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    problem.validate()?;
    let evaluator = PathEvaluator::new(problem, x, opts)?;
    let k = problem.bundle.rank;
    let deltas: Vec<f64> = partition.deltas().collect();
    let n_chunks = samples.div_ceil(CHUNK);

    let chunks: Vec<Result<ChunkStats>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(samples);
            let mut stats = ChunkStats::zero(k);
            let mut buf = vec![Complex64::new(0.0, 0.0); k];
            for i in lo..hi {
                let mut rng = crate::rng::sample_stream(seed, i);
                let mut draw = |j: usize, pos: &V3| {
                    draw_tangent_velocity(&problem.geometry, pos, deltas[j], &mut rng)
                };
                match evaluator.evaluate(x, partition, &mut draw, &mut buf)? {
                    SampleOutcome::Accepted { weight_norm } => {
                        stats.used += 1;
                        stats.max_norm = stats.max_norm.max(weight_norm);
                        for ((s, sq), b) in
                            stats.sum.iter_mut().zip(stats.sum_sq.iter_mut()).zip(buf.iter())
                        {
                            *s += b;
                            *sq += b.norm_sqr();
                        }
                    }
                    SampleOutcome::Rejected => stats.rejected += 1,
                }
            }
            Ok(stats)
        })
        .collect();

    let mut total = ChunkStats::zero(k);
    for c in chunks {
        total.absorb(&c?);
    }
    if total.used == 0 {
        return Err(Error::domain("all samples were rejected"));
    }
    let n = total.used as f64;
    let value: Vec<Complex64> = total.sum.iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = (0..k)
        .map(|c| {
            if total.used < 2 {
                return f64::INFINITY;
            }
            let var = ((total.sum_sq[c] - total.sum[c].norm_sqr() / n) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(SliceEstimate {
        value,
        stderr,
        samples_used: total.used,
        rejected: total.rejected,
        seed,
        high_rejection: (total.rejected as f64) > 0.01 * (samples as f64),
        max_weight_norm: total.max_norm,
    })
}

/// Gauss–Hermite nodes and weights for `∫ e^{-z²} f(z) dz` (Golub–Welsch on
/// the Jacobi matrix).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jm = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let beta = (k as f64 / 2.0).sqrt();
        jm[(k - 1, k)] = beta;
        jm[(k, k - 1)] = beta;
    }
    let eig = nalgebra::SymmetricEigen::new(jm);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (node, std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Deterministic single-step evaluation of the sliced operator on 1-D
/// models by Gauss–Hermite quadrature matched to the variance `2/t`.
pub fn quadrature_step_1d(
    problem: &HeatProblem,
    x: &V3,
    t: f64,
    nodes: usize,
) -> Result<Vec<Complex64>> {
    if problem.geometry.dim() != 1 {
        return Err(Error::unsupported("quadrature step needs a 1-D model"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid("time must be positive"));
    }
    problem.validate()?;
    let n = nodes.max(64);
    let (zs, ws) = gauss_hermite(n);
    let evaluator = PathEvaluator::new(problem, x, EstimateOptions::default())?;
    let partition = Partition::uniform(t, 1)?;
    let k = problem.bundle.rank;
    let mut acc = vec![Complex64::new(0.0, 0.0); k];
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    let norm = 1.0 / std::f64::consts::PI.sqrt();
    for (z, w) in zs.iter().zip(&ws) {
        let v = V3::new(2.0 * z / t.sqrt(), 0.0, 0.0);
        let mut fixed = |_j: usize, _pos: &V3| v;
        match evaluator.evaluate(x, &partition, &mut fixed, &mut buf)? {
            SampleOutcome::Accepted { .. } => {
                for c in 0..k {
                    acc[c] += buf[c] * (norm * w);
                }
            }
            SampleOutcome::Rejected => {
                return Err(Error::domain("quadrature node produced a rejected path"));
            }
        }
    }
    Ok(acc)
}

/// Result of the infinitesimal-generator probe.
#[derive(Clone, Debug)]
pub struct GeneratorProbe {
    /// Richardson extrapolation of `(P_t u(x) - u(x)) / t` to `t = 0`.
    pub value: Vec<Complex64>,
    pub stderr: Vec<f64>,
    /// Mean difference quotient and standard error at each probe time.
    pub per_time: Vec<(f64, Vec<Complex64>, Vec<f64>)>,
    /// Set when the noise dominates the observed trend between probe times.
    pub inconclusive: bool,
    pub rejected: u64,
}

/// Estimate `-L u(x)` from single-step difference quotients at the probe
/// times (decreasing), Richardson-extrapolated to zero. One Gaussian draw
/// per sample is shared across the probe times, so the extrapolated
/// combination is computed per sample and its standard error is honest.
#[allow(clippy::needless_range_loop)] // parallel accumulator arrays
pub fn generator_probe(
    problem: &HeatProblem,
    x: &V3,
    t_list: &[f64],
    samples: u64,
    seed: u64,
) -> Result<GeneratorProbe> {
    if t_list.is_empty() || t_list.windows(2).any(|w| w[0] <= w[1]) || t_list.iter().any(|t| *t <= 0.0) {
        return Err(Error::invalid("probe times must be positive and decreasing"));
    }
    problem.validate()?;
    let evaluator = PathEvaluator::new(problem, x, EstimateOptions::default())?;
    let k = problem.bundle.rank;
    let m = t_list.len();
    let dim = problem.geometry.dim();

    // Lagrange-at-zero extrapolation coefficients
    let coeff: Vec<f64> = (0..m)
        .map(|j| {
            (0..m)
                .filter(|i| *i != j)
                .map(|i| t_list[i] / (t_list[i] - t_list[j]))
                .product()
        })
        .collect();

    let mut u0 = vec![Complex64::new(0.0, 0.0); k];
    problem.section.eval_into(&problem.geometry, x, &mut u0);

    let n_chunks = samples.div_ceil(CHUNK);
    struct ProbeChunk {
        combo_sum: Vec<Complex64>,
        combo_sq: Vec<f64>,
        per_t_sum: Vec<Vec<Complex64>>,
        per_t_sq: Vec<Vec<f64>>,
        used: u64,
        rejected: u64,
    }
    let chunks: Vec<Result<ProbeChunk>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(samples);
            let mut st = ProbeChunk {
                combo_sum: vec![Complex64::new(0.0, 0.0); k],
                combo_sq: vec![0.0; k],
                per_t_sum: vec![vec![Complex64::new(0.0, 0.0); k]; m],
                per_t_sq: vec![vec![0.0; k]; m],
                used: 0,
                rejected: 0,
            };
            let mut buf = vec![Complex64::new(0.0, 0.0); k];
            let mut quotients = vec![vec![Complex64::new(0.0, 0.0); k]; m];
            let basis_dim = dim;
            for i in lo..hi {
                let mut rng = crate::rng::sample_stream(seed, i);
                let mut z = [0.0_f64; 2];
                for zc in z.iter_mut().take(basis_dim) {
                    *zc = rng.sample(StandardNormal);
                }
                let mut rejected = false;
                for (ti, &t) in t_list.iter().enumerate() {
                    let partition = Partition::uniform(t, 1).expect("valid probe time");
                    let sigma = (2.0 / t).sqrt();
                    let mut fixed = |_j: usize, pos: &V3| {
                        let basis = problem.geometry.tangent_basis(pos);
                        let mut v = V3::zeros();
                        for (c, b) in basis.iter().enumerate().take(basis_dim) {
                            v += sigma * z[c] * b;
                        }
                        v
                    };
                    match evaluator.evaluate(x, &partition, &mut fixed, &mut buf)? {
                        SampleOutcome::Accepted { .. } => {
                            for c in 0..k {
                                quotients[ti][c] = (buf[c] - u0[c]) / t;
                            }
                        }
                        SampleOutcome::Rejected => {
                            rejected = true;
                            break;
                        }
                    }
                }
                if rejected {
                    st.rejected += 1;
                    continue;
                }
                st.used += 1;
                for c in 0..k {
                    let mut combo = Complex64::new(0.0, 0.0);
                    for ti in 0..m {
                        combo += quotients[ti][c] * coeff[ti];
                        st.per_t_sum[ti][c] += quotients[ti][c];
                        st.per_t_sq[ti][c] += quotients[ti][c].norm_sqr();
                    }
                    st.combo_sum[c] += combo;
                    st.combo_sq[c] += combo.norm_sqr();
                }
            }
            Ok(st)
        })
        .collect();

    let mut used = 0u64;
    let mut rejected = 0u64;
    let mut combo_sum = vec![Complex64::new(0.0, 0.0); k];
    let mut combo_sq = vec![0.0; k];
    let mut per_t_sum = vec![vec![Complex64::new(0.0, 0.0); k]; m];
    let mut per_t_sq = vec![vec![0.0; k]; m];
    for c in chunks {
        let c = c?;
        used += c.used;
        rejected += c.rejected;
        for i in 0..k {
            combo_sum[i] += c.combo_sum[i];
            combo_sq[i] += c.combo_sq[i];
        }
        for ti in 0..m {
            for i in 0..k {
                per_t_sum[ti][i] += c.per_t_sum[ti][i];
                per_t_sq[ti][i] += c.per_t_sq[ti][i];
            }
        }
    }
    if used < 2 {
        return Err(Error::domain("not enough accepted samples for the probe"));
    }
    let n = used as f64;
    let value: Vec<Complex64> = combo_sum.iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = (0..k)
        .map(|c| {
            let var = ((combo_sq[c] - combo_sum[c].norm_sqr() / n) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    let per_time: Vec<(f64, Vec<Complex64>, Vec<f64>)> = (0..m)
        .map(|ti| {
            let mean: Vec<Complex64> = per_t_sum[ti].iter().map(|s| s / n).collect();
            let se: Vec<f64> = (0..k)
                .map(|c| {
                    let var = ((per_t_sq[ti][c] - per_t_sum[ti][c].norm_sqr() / n) / (n - 1.0))
                        .max(0.0);
                    (var / n).sqrt()
                })
                .collect();
            (t_list[ti], mean, se)
        })
        .collect();

    // noise check: the step between successive quotients should exceed the
    // combined noise, otherwise the trend is not resolved
    let mut inconclusive = false;
    for w in per_time.windows(2) {
        let (_, m0, s0) = &w[0];
        let (_, m1, s1) = &w[1];
        for c in 0..k {
            let inc = (m1[c] - m0[c]).norm();
            let noise = (s0[c].powi(2) + s1[c].powi(2)).sqrt();
            if noise > 0.5 * inc {
                inconclusive = true;
            }
        }
    }

    Ok(GeneratorProbe { value, stderr, per_time, inconclusive, rejected })
}
