//! Run configuration: a single strict TOML file. Unknown keys are rejected
//! so a typo cannot silently change a convergence study.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{BoundaryOperator, BundleSpec, Connection, FieldScalar, Potential};
use crate::geometry::{GeometryModel, LevelSet, ModelKind, PointClass, V3};
use crate::semigroup::{FieldSection, HeatProblem, SectionKind};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub bundle: BundleConfig,
    pub boundary: BoundaryConfig,
    pub section: SectionConfig,
    pub run: RunSettings,
    pub grid: GridConfig,
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// `interval | disk | implicit-planar | circle | flat-torus | sphere`
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    /// Level set for `implicit-planar`: `ellipse | square`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ry: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grazing_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    pub rank: usize,
    /// `real | complex`
    pub scalar: String,
    /// `zero | circle-holonomy | rotation-coupling`
    pub connection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connection_coupling: Option<f64>,
    /// `zero | constant | diagonal | cosine-well`
    pub potential: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_entries: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_amplitude: Option<f64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// `dirichlet | neumann | blockwise`
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signs: Option<Vec<i8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionConfig {
    /// `constant | sine-mode | cosine-mode | fourier-mode | sphere-band |
    /// torus-cos-mode`
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode2: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
}

fn default_fd_grid() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub time: f64,
    pub partitions: Vec<usize>,
    pub samples: u64,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// Accept configurations without an oracle; errors become blank columns.
    #[serde(default)]
    pub descriptive: bool,
    #[serde(default = "default_fd_grid")]
    pub fd_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_times: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `uniform | explicit`
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// `csv | jsonl`
    pub format: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_reflections: Option<u32>,
}

/// Parse a strict TOML configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a configuration back to TOML.
pub fn emit_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))
}

/// SHA-256 of the canonical serialized configuration.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let text = emit_config(cfg)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run.partitions.is_empty() {
            return Err(Error::Config("run.partitions must not be empty".into()));
        }
        if self.run.partitions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("run.partitions must be strictly increasing".into()));
        }
        if !(self.run.time > 0.0) {
            return Err(Error::Config("run.time must be positive".into()));
        }
        if self.run.samples == 0 {
            return Err(Error::Config("run.samples must be positive".into()));
        }
        match self.output.format.as_str() {
            "csv" | "jsonl" => {}
            other => return Err(Error::Config(format!("unknown output format `{other}`"))),
        }
        let problem = self.build_problem()?;
        let _ = self.grid_points(&problem.geometry)?;
        Ok(())
    }

    pub fn build_geometry(&self) -> Result<GeometryModel> {
        let g = &self.geometry;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("geometry.{name} required for {}", g.kind)))
        };
        let mut model = match g.kind.as_str() {
            "interval" => GeometryModel::interval(need(g.a, "a")?, need(g.b, "b")?)?,
            "disk" => GeometryModel::disk(need(g.radius, "radius")?)?,
            "circle" => GeometryModel::circle(need(g.radius, "radius")?)?,
            "flat-torus" => GeometryModel::flat_torus(need(g.l1, "l1")?, need(g.l2, "l2")?)?,
            "sphere" => GeometryModel::sphere(need(g.radius, "radius")?)?,
            "implicit-planar" => {
                let level = match g.level.as_deref() {
                    Some("ellipse") => LevelSet::Ellipse {
                        rx: need(g.rx, "rx")?,
                        ry: need(g.ry, "ry")?,
                    },
                    Some("square") => LevelSet::Square { half_width: need(g.half_width, "half_width")? },
                    other => {
                        return Err(Error::Config(format!(
                            "unknown level set {other:?} (expected ellipse|square)"
                        )))
                    }
                };
                GeometryModel::implicit_planar(level)?
            }
            other => return Err(Error::Config(format!("unknown geometry kind `{other}`"))),
        };
        if let Some(tol) = g.hit_tolerance {
            model = model.with_hit_tolerance(tol);
        }
        if let Some(thr) = g.grazing_threshold {
            model = model.with_grazing_threshold(thr);
        }
        Ok(model)
    }

    pub fn build_bundle(&self) -> Result<BundleSpec> {
        let b = &self.bundle;
        let scalar = match b.scalar.as_str() {
            "real" => FieldScalar::Real,
            "complex" => FieldScalar::Complex,
            other => return Err(Error::Config(format!("unknown scalar field `{other}`"))),
        };
        let connection = match b.connection.as_str() {
            "zero" => Connection::Zero,
            "circle-holonomy" => Connection::CircleHolonomy {
                coupling: b
                    .connection_coupling
                    .ok_or_else(|| Error::Config("connection_coupling required".into()))?,
            },
            "rotation-coupling" => Connection::RotationCoupling {
                coupling: b
                    .connection_coupling
                    .ok_or_else(|| Error::Config("connection_coupling required".into()))?,
            },
            other => return Err(Error::Config(format!("unknown connection `{other}`"))),
        };
        let potential = match b.potential.as_str() {
            "zero" => Potential::Zero,
            "constant" => Potential::Constant {
                value: b
                    .potential_value
                    .ok_or_else(|| Error::Config("potential_value required".into()))?,
            },
            "diagonal" => Potential::Diagonal {
                entries: b
                    .potential_entries
                    .clone()
                    .ok_or_else(|| Error::Config("potential_entries required".into()))?,
            },
            "cosine-well" => Potential::CosineWell {
                amplitude: b
                    .potential_amplitude
                    .ok_or_else(|| Error::Config("potential_amplitude required".into()))?,
            },
            other => return Err(Error::Config(format!("unknown potential `{other}`"))),
        };
        Ok(BundleSpec { rank: b.rank, scalar, connection, potential, alpha: b.alpha })
    }

    pub fn build_boundary(&self) -> Result<BoundaryOperator> {
        match self.boundary.preset.as_str() {
            "dirichlet" => Ok(BoundaryOperator::dirichlet(self.bundle.rank)),
            "neumann" => Ok(BoundaryOperator::neumann(self.bundle.rank)),
            "blockwise" => {
                let signs = self
                    .boundary
                    .signs
                    .as_ref()
                    .ok_or_else(|| Error::Config("boundary.signs required for blockwise".into()))?;
                if signs.len() != self.bundle.rank {
                    return Err(Error::Config("boundary.signs length must equal rank".into()));
                }
                BoundaryOperator::blockwise(signs)
            }
            other => Err(Error::Config(format!("unknown boundary preset `{other}`"))),
        }
    }

    pub fn build_section(&self) -> Result<FieldSection> {
        let s = &self.section;
        let kind = match s.name.as_str() {
            "constant" => SectionKind::Constant {
                values: s
                    .values
                    .clone()
                    .ok_or_else(|| Error::Config("section.values required".into()))?,
            },
            "sine-mode" => SectionKind::SineMode {
                mode: s.mode.ok_or_else(|| Error::Config("section.mode required".into()))? as u32,
            },
            "cosine-mode" => SectionKind::CosineMode {
                mode: s.mode.ok_or_else(|| Error::Config("section.mode required".into()))? as u32,
            },
            "fourier-mode" => SectionKind::FourierMode {
                mode: s.mode.ok_or_else(|| Error::Config("section.mode required".into()))? as i32,
            },
            "sphere-band" => {
                let c = s
                    .coeffs
                    .clone()
                    .ok_or_else(|| Error::Config("section.coeffs required".into()))?;
                if c.len() != 3 {
                    return Err(Error::Config("sphere-band needs 3 coefficients".into()));
                }
                SectionKind::SphereBand { coeffs: [c[0], c[1], c[2]] }
            }
            "torus-cos-mode" => SectionKind::TorusCosMode {
                k1: s.mode.ok_or_else(|| Error::Config("section.mode required".into()))? as i32,
                k2: s.mode2.ok_or_else(|| Error::Config("section.mode2 required".into()))? as i32,
            },
            other => return Err(Error::Config(format!("unknown section `{other}`"))),
        };
        Ok(FieldSection::new(kind))
    }

    pub fn build_problem(&self) -> Result<HeatProblem> {
        let problem = HeatProblem {
            geometry: self.build_geometry()?,
            bundle: self.build_bundle()?,
            boundary: self.build_boundary()?,
            section: self.build_section()?,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Evaluation grid: explicit points or a geometry-aware uniform layout.
    /// Every point must lie in the closed manifold.
    pub fn grid_points(&self, g: &GeometryModel) -> Result<Vec<V3>> {
        let pts = match self.grid.kind.as_str() {
            "explicit" => {
                let raw = self
                    .grid
                    .points
                    .as_ref()
                    .ok_or_else(|| Error::Config("grid.points required".into()))?;
                raw.iter()
                    .map(|p| {
                        let mut v = V3::zeros();
                        for (i, c) in p.iter().take(3).enumerate() {
                            v[i] = *c;
                        }
                        v
                    })
                    .collect()
            }
            "uniform" => {
                let count = self
                    .grid
                    .count
                    .ok_or_else(|| Error::Config("grid.count required".into()))?;
                uniform_grid(g, count)?
            }
            other => return Err(Error::Config(format!("unknown grid kind `{other}`"))),
        };
        for p in &pts {
            if g.classify_point(p)? == PointClass::Outside {
                return Err(Error::Config(format!(
                    "grid point ({}, {}, {}) lies outside the manifold",
                    p.x, p.y, p.z
                )));
            }
        }
        Ok(pts)
    }
}

/// A deterministic, roughly even spread of `count` points in the interior.
pub fn uniform_grid(g: &GeometryModel, count: usize) -> Result<Vec<V3>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    Ok(match g.kind() {
        ModelKind::Interval { a, b } => (1..=count)
            .map(|i| V3::new(a + (b - a) * i as f64 / (count + 1) as f64, 0.0, 0.0))
            .collect(),
        ModelKind::Circle { .. } => (0..count)
            .map(|i| V3::new(crate::geometry::TAU * i as f64 / count as f64, 0.0, 0.0))
            .collect(),
        ModelKind::Disk { radius } => (0..count)
            .map(|i| {
                let r = 0.85 * radius * ((i as f64 + 0.5) / count as f64).sqrt();
                let th = crate::geometry::TAU * ((i as f64 * GOLDEN) % 1.0);
                V3::new(r * th.cos(), r * th.sin(), 0.0)
            })
            .collect(),
        ModelKind::ImplicitPlanar { level } => {
            let (xmin, xmax, ymin, ymax) = level.bounding_box();
            let mut pts = Vec::with_capacity(count);
            let mut i = 0u64;
            while pts.len() < count && i < 100_000 {
                let fx = ((i as f64 + 0.5) * GOLDEN) % 1.0;
                let fy = ((i as f64 + 0.5) * (GOLDEN * GOLDEN)) % 1.0;
                let p = V3::new(xmin + (xmax - xmin) * fx, ymin + (ymax - ymin) * fy, 0.0);
                // keep points clearly interior
                if level.value(p.x, p.y) > 0.05 * level.characteristic_size() {
                    pts.push(p);
                }
                i += 1;
            }
            if pts.len() < count {
                return Err(Error::Config("could not place grid points inside the domain".into()));
            }
            pts
        }
        ModelKind::FlatTorus { l1, l2 } => (0..count)
            .map(|i| {
                let fx = (i as f64 + 0.5) / count as f64;
                let fy = ((i as f64 + 0.5) * GOLDEN) % 1.0;
                V3::new(l1 * fx, l2 * fy, 0.0)
            })
            .collect(),
        ModelKind::Sphere { radius } => (0..count)
            .map(|i| {
                // Fibonacci sphere
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let th = crate::geometry::TAU * ((i as f64 * GOLDEN) % 1.0);
                V3::new(radius * r * th.cos(), radius * r * th.sin(), radius * z)
            })
            .collect(),
    })
}

/// Number of chart coordinates written to reports for this geometry.
pub fn chart_coords(g: &GeometryModel) -> usize {
    match g.kind() {
        ModelKind::Interval { .. } | ModelKind::Circle { .. } => 1,
        ModelKind::Sphere { .. } => 3,
        _ => 2,
    }
}
