//! Exact and reference heat-equation solutions for the acceptance tests:
//! eigenfunction expansions on the model problems, method-of-images kernels
//! on the half-line and the interval, and a Crank–Nicolson reference for
//! interval problems with a potential.

use num_complex::Complex64;

use crate::bundle::{BoundaryPreset, BundleSpec, Connection, Potential};
use crate::geometry::{GeometryModel, ModelKind};
use crate::semigroup::{FieldSection, HeatProblem, SectionKind};
use crate::{Error, Result};

/// The solvable-in-closed-form problems.
#[derive(Clone, Debug, PartialEq)]
pub enum SpectralProblem {
    IntervalDirichlet { a: f64, b: f64 },
    IntervalNeumann { a: f64, b: f64 },
    /// Circle with a holonomy coupling `c`: modes `e^{ikθ}` have eigenvalue
    /// `((k + c)/radius)²`.
    Circle { radius: f64, holonomy: f64 },
    FlatTorus { l1: f64, l2: f64 },
    Sphere { radius: f64 },
}

/// Exact eigenpairs for one model problem, with a truncation for kernel
/// sums.
#[derive(Clone, Debug)]
pub struct SpectralModel {
    pub problem: SpectralProblem,
    /// Kernel sums stop once the mode weight drops below this.
    pub term_cutoff: f64,
}

impl SpectralModel {
    pub fn new(problem: SpectralProblem) -> Self {
        SpectralModel { problem, term_cutoff: 1e-16 }
    }

    /// Build the spectral model matching a heat problem, when one exists
    /// (rank-1, no potential; the connection only through the circle
    /// holonomy).
    pub fn for_problem(p: &HeatProblem) -> Option<SpectralModel> {
        if p.bundle.rank != 1 || !matches!(p.bundle.potential, Potential::Zero) {
            return None;
        }
        let problem = match (p.geometry.kind(), &p.bundle.connection) {
            (ModelKind::Interval { a, b }, Connection::Zero) => {
                match p.boundary.preset() {
                    BoundaryPreset::Dirichlet => SpectralProblem::IntervalDirichlet { a: *a, b: *b },
                    BoundaryPreset::Neumann => SpectralProblem::IntervalNeumann { a: *a, b: *b },
                    BoundaryPreset::Blockwise => match p.boundary.diagonal_signs()?[0] {
                        s if s < 0.0 => SpectralProblem::IntervalDirichlet { a: *a, b: *b },
                        _ => SpectralProblem::IntervalNeumann { a: *a, b: *b },
                    },
                }
            }
            (ModelKind::Circle { radius }, Connection::Zero) => {
                SpectralProblem::Circle { radius: *radius, holonomy: 0.0 }
            }
            (ModelKind::Circle { radius }, Connection::CircleHolonomy { coupling }) => {
                SpectralProblem::Circle { radius: *radius, holonomy: *coupling }
            }
            (ModelKind::FlatTorus { l1, l2 }, Connection::Zero) => {
                SpectralProblem::FlatTorus { l1: *l1, l2: *l2 }
            }
            (ModelKind::Sphere { radius }, Connection::Zero) => {
                SpectralProblem::Sphere { radius: *radius }
            }
            _ => return None,
        };
        Some(SpectralModel::new(problem))
    }

    /// Eigenvalue of a registry section under this problem, when the section
    /// is one of its eigenmodes.
    pub fn eigenvalue_of(&self, section: &FieldSection) -> Result<f64> {
        let lambda = match (&self.problem, &section.kind) {
            (SpectralProblem::IntervalDirichlet { a, b }, SectionKind::SineMode { mode }) => {
                let k = *mode as f64 * std::f64::consts::PI / (b - a);
                k * k
            }
            (SpectralProblem::IntervalNeumann { a, b }, SectionKind::CosineMode { mode }) => {
                let k = *mode as f64 * std::f64::consts::PI / (b - a);
                k * k
            }
            (SpectralProblem::IntervalNeumann { .. }, SectionKind::Constant { values })
                if values.len() == 1 =>
            {
                0.0
            }
            (SpectralProblem::Circle { radius, holonomy }, SectionKind::FourierMode { mode }) => {
                let k = (*mode as f64 + holonomy) / radius;
                k * k
            }
            (
                SpectralProblem::Circle { .. } | SpectralProblem::FlatTorus { .. },
                SectionKind::Constant { values },
            ) if values.len() == 1 => 0.0,
            (SpectralProblem::FlatTorus { l1, l2 }, SectionKind::TorusCosMode { k1, k2 }) => {
                let w1 = crate::geometry::TAU * *k1 as f64 / l1;
                let w2 = crate::geometry::TAU * *k2 as f64 / l2;
                w1 * w1 + w2 * w2
            }
            (SpectralProblem::Sphere { radius }, SectionKind::SphereBand { .. }) => {
                2.0 / (radius * radius)
            }
            (SpectralProblem::Sphere { .. }, SectionKind::Constant { values })
                if values.len() == 1 =>
            {
                0.0
            }
            _ => {
                return Err(Error::OracleMissing(
                    "section is not an eigenmode of this problem".into(),
                ))
            }
        };
        Ok(lambda)
    }

    /// Exact evolution of an eigenmode section: scale by `e^{-λ t}`.
    pub fn spectral_evolve(&self, section: &FieldSection, t: f64) -> Result<FieldSection> {
        if !(t >= 0.0) {
            return Err(Error::invalid("time must be nonnegative"));
        }
        let lambda = self.eigenvalue_of(section)?;
        Ok(section.scaled(Complex64::new((-lambda * t).exp(), 0.0)))
    }

    /// Exact heat kernel of the interval problems by eigenfunction
    /// expansion, truncated once mode weights fall below the cutoff.
    pub fn heat_kernel(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::invalid("kernel needs t > 0"));
        }
        match self.problem {
            SpectralProblem::IntervalDirichlet { a, b } => {
                let l = b - a;
                let mut total = 0.0;
                for k in 1..10_000 {
                    let freq = k as f64 * std::f64::consts::PI / l;
                    let weight = (-freq * freq * t).exp() * (2.0 / l);
                    if weight < self.term_cutoff {
                        break;
                    }
                    total += weight * (freq * (x - a)).sin() * (freq * (y - a)).sin();
                }
                Ok(total)
            }
            SpectralProblem::IntervalNeumann { a, b } => {
                let l = b - a;
                let mut total = 1.0 / l;
                for k in 1..10_000 {
                    let freq = k as f64 * std::f64::consts::PI / l;
                    let weight = (-freq * freq * t).exp() * (2.0 / l);
                    if weight < self.term_cutoff {
                        break;
                    }
                    total += weight * (freq * (x - a)).cos() * (freq * (y - a)).cos();
                }
                Ok(total)
            }
            _ => Err(Error::unsupported("heat kernel only for interval problems")),
        }
    }
}

/// Domain of the image-sum kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImageProblem {
    /// The half-line `[0, ∞)`.
    HalfLine,
    /// The interval `[a, b]`.
    Interval { a: f64, b: f64 },
}

/// Boundary condition of the image-sum kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageBc {
    Dirichlet,
    Neumann,
}

fn gauss_1d(d: f64, t: f64) -> f64 {
    (4.0 * std::f64::consts::PI * t).sqrt().recip() * (-d * d / (4.0 * t)).exp()
}

/// Method-of-images heat kernel: a signed sum of free Gaussians whose
/// Dirichlet signs mirror the parity of the reflection count. Terms are
/// added until they drop below 1e-16.
pub fn image_kernel(problem: ImageProblem, bc: ImageBc, x: f64, y: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("kernel needs t > 0"));
    }
    let sign = match bc {
        ImageBc::Dirichlet => -1.0,
        ImageBc::Neumann => 1.0,
    };
    match problem {
        ImageProblem::HalfLine => Ok(gauss_1d(x - y, t) + sign * gauss_1d(x + y, t)),
        ImageProblem::Interval { a, b } => {
            let l = b - a;
            let (xr, yr) = (x - a, y - a);
            let mut total = 0.0;
            for m in 0..10_000i64 {
                let mut layer = 0.0;
                let mut add = |m: i64| {
                    let shift = 2.0 * l * m as f64;
                    layer += gauss_1d(xr - yr + shift, t) + sign * gauss_1d(xr + yr + shift, t);
                };
                if m == 0 {
                    add(0);
                } else {
                    add(m);
                    add(-m);
                }
                total += layer;
                if m > 0 && layer.abs() < 1e-16 {
                    break;
                }
            }
            Ok(total)
        }
    }
}

/// Apply an image-sum interval kernel to a section by fine composite
/// Simpson quadrature in the source variable.
pub fn image_kernel_apply(
    g: &GeometryModel,
    bc: ImageBc,
    section: &FieldSection,
    x: f64,
    t: f64,
    quad_points: usize,
) -> Result<f64> {
    let (a, b) = match g.kind() {
        ModelKind::Interval { a, b } => (*a, *b),
        _ => return Err(Error::unsupported("image kernels act on interval sections")),
    };
    let n = quad_points.max(64);
    let h = (b - a) / n as f64;
    let mut out = [Complex64::new(0.0, 0.0)];
    let mut f = |y: f64| -> Result<f64> {
        section.eval_into(g, &crate::geometry::V3::new(y, 0.0, 0.0), &mut out);
        Ok(image_kernel(ImageProblem::Interval { a, b }, bc, x, y, t)? * out[0].re)
    };
    let mut total = 0.0;
    let mut left = f(a)?;
    for i in 0..n {
        let y0 = a + i as f64 * h;
        let mid = f(y0 + 0.5 * h)?;
        let right = f(y0 + h)?;
        total += h / 6.0 * (left + 4.0 * mid + right);
        left = right;
    }
    Ok(total)
}

/// Crank–Nicolson reference evolution of `∂_t u = ∂²u - V u` on an interval
/// with a Dirichlet or Neumann condition. The grid resolution is
/// Richardson-verified against the half-resolution run to 1e-7; the result
/// is returned as an interpolating grid section.
pub fn fd_reference_evolve(
    g: &GeometryModel,
    bundle: &BundleSpec,
    bc: ImageBc,
    section: &FieldSection,
    t: f64,
    grid_size: usize,
) -> Result<FieldSection> {
    let (a, b) = match g.kind() {
        ModelKind::Interval { a, b } => (*a, *b),
        _ => return Err(Error::unsupported("the reference solver works on intervals")),
    };
    if bundle.rank != 1 {
        return Err(Error::unsupported("the reference solver is scalar"));
    }
    if grid_size < 2000 {
        return Err(Error::invalid("reference grid must have at least 2000 cells"));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("time must be nonnegative"));
    }

    let fine = cn_run(g, bundle, bc, section, t, a, b, grid_size)?;
    let coarse = cn_run(g, bundle, bc, section, t, a, b, grid_size / 2)?;
    let mut max_err_est: f64 = 0.0;
    for (i, c) in coarse.iter().enumerate() {
        // coarse node i sits on fine node 2i; second-order scheme means the
        // true error of the fine run is about a third of the difference
        let diff = (fine[2 * i] - c).abs();
        max_err_est = max_err_est.max(diff / 3.0);
    }
    if max_err_est > 1e-7 {
        return Err(Error::domain(format!(
            "reference run failed self-verification: estimated error {max_err_est:.3e}"
        )));
    }
    Ok(FieldSection::new(SectionKind::Grid1d { a, b, values: fine }))
}

/// One Crank–Nicolson run on `n+1` nodes; time step capped at the square of
/// the grid spacing.
#[allow(clippy::too_many_arguments)]
fn cn_run(
    g: &GeometryModel,
    bundle: &BundleSpec,
    bc: ImageBc,
    section: &FieldSection,
    t: f64,
    a: f64,
    b: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let h = (b - a) / n as f64;
    let mut u = vec![0.0_f64; n + 1];
    let mut out = [Complex64::new(0.0, 0.0)];
    for (i, ui) in u.iter_mut().enumerate() {
        section.eval_into(g, &crate::geometry::V3::new(a + i as f64 * h, 0.0, 0.0), &mut out);
        *ui = out[0].re;
    }
    if t == 0.0 {
        return Ok(u);
    }
    let steps = (t / (h * h)).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let r = dt / (2.0 * h * h);
    let vpot: Vec<f64> = (0..=n)
        .map(|i| bundle.potential_component(0, &crate::geometry::V3::new(a + i as f64 * h, 0.0, 0.0)))
        .collect();

    // tridiagonal LHS = I + dt/2 (−D₂ + V), RHS applies I − dt/2 (−D₂ + V)
    let m = n + 1;
    let mut lo = vec![0.0; m];
    let mut di = vec![0.0; m];
    let mut up = vec![0.0; m];
    for i in 1..n {
        lo[i] = -r;
        di[i] = 1.0 + 2.0 * r + 0.5 * dt * vpot[i];
        up[i] = -r;
    }
    match bc {
        ImageBc::Dirichlet => {
            di[0] = 1.0;
            di[n] = 1.0;
        }
        ImageBc::Neumann => {
            // ghost reflection folds the off-diagonal entry back in
            di[0] = 1.0 + 2.0 * r + 0.5 * dt * vpot[0];
            up[0] = -2.0 * r;
            di[n] = 1.0 + 2.0 * r + 0.5 * dt * vpot[n];
            lo[n] = -2.0 * r;
        }
    }

    let mut rhs = vec![0.0; m];
    let mut cp = vec![0.0; m];
    let mut dp = vec![0.0; m];
    for _ in 0..steps {
        for i in 1..n {
            rhs[i] = u[i] * (1.0 - 2.0 * r - 0.5 * dt * vpot[i]) + r * (u[i - 1] + u[i + 1]);
        }
        match bc {
            ImageBc::Dirichlet => {
                rhs[0] = 0.0;
                rhs[n] = 0.0;
            }
            ImageBc::Neumann => {
                rhs[0] = u[0] * (1.0 - 2.0 * r - 0.5 * dt * vpot[0]) + 2.0 * r * u[1];
                rhs[n] = u[n] * (1.0 - 2.0 * r - 0.5 * dt * vpot[n]) + 2.0 * r * u[n - 1];
            }
        }
        // Thomas solve
        cp[0] = up[0] / di[0];
        dp[0] = rhs[0] / di[0];
        for i in 1..m {
            let w = di[i] - lo[i] * cp[i - 1];
            cp[i] = up[i] / w;
            dp[i] = (rhs[i] - lo[i] * dp[i - 1]) / w;
        }
        u[m - 1] = dp[m - 1];
        for i in (0..m - 1).rev() {
            u[i] = dp[i] - cp[i] * u[i + 1];
        }
    }
    Ok(u)
}

/// Which reference produced an oracle value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleKind {
    Spectral,
    FiniteDifference,
}

/// Evolve the problem's section by the best available oracle: exact spectral
/// calculus when the problem has one, otherwise the Crank–Nicolson reference
/// on interval problems with a potential.
pub fn reference_evolve(
    problem: &HeatProblem,
    t: f64,
    fd_grid: usize,
) -> Result<(FieldSection, OracleKind)> {
    if let Some(model) = SpectralModel::for_problem(problem) {
        if let Ok(section) = model.spectral_evolve(&problem.section, t) {
            return Ok((section, OracleKind::Spectral));
        }
    }
    if matches!(problem.geometry.kind(), ModelKind::Interval { .. }) && problem.bundle.rank == 1 {
        let bc = match problem.boundary.preset() {
            BoundaryPreset::Dirichlet => ImageBc::Dirichlet,
            BoundaryPreset::Neumann => ImageBc::Neumann,
            BoundaryPreset::Blockwise => {
                match problem.boundary.diagonal_signs().map(|s| s[0]) {
                    Some(s) if s < 0.0 => ImageBc::Dirichlet,
                    Some(_) => ImageBc::Neumann,
                    None => return Err(Error::OracleMissing("non-diagonal boundary".into())),
                }
            }
        };
        let section = fd_reference_evolve(
            &problem.geometry,
            &problem.bundle,
            bc,
            &problem.section,
            t,
            fd_grid,
        )?;
        return Ok((section, OracleKind::FiniteDifference));
    }
    Err(Error::OracleMissing("no oracle covers this configuration".into()))
}
