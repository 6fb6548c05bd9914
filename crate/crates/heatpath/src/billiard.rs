//! Reflected geodesics and the broken billiard flow.
//!
//! A path alternates closed-form geodesic advancement with the boundary
//! reflection `v - 2 <v, n> n` at detected transversal hits. Grazing hits,
//! declared-corner hits and reflection-cap overruns reject the path instead
//! of continuing it; rejected paths stand in for the measure-zero set on
//! which the flow is not defined. A path starting on the boundary with an
//! outward velocity reflects at time zero and carries sign `-1`; the time-0
//! event is recorded like any other so downstream transport needs no special
//! case for it.

use crate::geometry::{GeometryModel, ModelKind, PhasePoint, PointClass, V3};
use crate::{Error, Result};
use nalgebra::Matrix3;

/// Why a trace ended the way it did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathStatus {
    Ok,
    GrazingRejected,
    CornerRejected,
    CapExceeded,
}

/// One geodesic piece between reflections (or nodes).
#[derive(Clone, Copy, Debug)]
pub struct PathSegment {
    pub start: PhasePoint,
    pub duration: f64,
}

/// A boundary reflection at time `time` along the path.
#[derive(Clone, Copy, Debug)]
pub struct ReflectionEvent {
    pub time: f64,
    pub point: V3,
    pub incoming: V3,
    pub outgoing: V3,
}

/// A piecewise reflected geodesic with its reflection log.
#[derive(Clone, Debug)]
pub struct ReflectedPath {
    pub segments: Vec<PathSegment>,
    pub events: Vec<ReflectionEvent>,
    /// `-1` exactly when the path started on the boundary pointing outward.
    pub sign: i8,
    pub total_time: f64,
    pub status: PathStatus,
    /// Phase point where tracing stopped (end of path when `status == Ok`).
    pub end: PhasePoint,
}

impl ReflectedPath {
    /// Number of boundary reflections, including a time-0 event.
    pub fn reflections(&self) -> usize {
        self.events.len()
    }

    pub fn is_ok(&self) -> bool {
        self.status == PathStatus::Ok
    }
}

/// Result of applying the broken billiard flow for a signed duration.
#[derive(Clone, Debug)]
pub struct FlowResult {
    /// Phase point after the flow; equals the initial point off the good set.
    pub final_state: PhasePoint,
    pub reflections: usize,
    pub path: ReflectedPath,
    /// Whether the initial condition admitted a full reflected geodesic.
    pub in_domain: bool,
}

/// Outcome summary of a callback-driven trace.
#[derive(Clone, Copy, Debug)]
pub struct TraceOutcome {
    pub end: PhasePoint,
    pub reflections: u32,
    pub sign: i8,
    pub status: PathStatus,
}

/// Default reflection cap: 10^4 per unit time per unit speed.
pub fn default_reflection_cap(t: f64, speed: f64) -> u32 {
    let cap = 1e4 * t.abs() * speed;
    if cap >= u32::MAX as f64 {
        u32::MAX
    } else {
        (cap as u32).max(64)
    }
}

/// One step of a trace, delivered to the callback in time order.
#[derive(Clone, Copy, Debug)]
pub enum TraceStep<'a> {
    /// A completed geodesic piece.
    Segment { start: &'a PhasePoint, duration: f64 },
    /// A boundary reflection.
    Reflection { time: f64, point: &'a V3, incoming: &'a V3, outgoing: &'a V3 },
}

/// Core tracing loop. Invokes the callback for every completed geodesic
/// piece and every reflection, in time order. The callback sees nothing of
/// a rejected tail beyond what completed before the rejection.
pub fn trace_with(
    g: &GeometryModel,
    x: &V3,
    v: &V3,
    t: f64,
    max_reflections: u32,
    on_step: &mut dyn FnMut(&TraceStep),
) -> Result<TraceOutcome> {
    if !(t >= 0.0) {
        return Err(Error::invalid("trace duration must be nonnegative"));
    }
    let mut pos = g.wrap(x);
    let mut vel = *v;
    let mut sign: i8 = 1;
    let mut reflections: u32 = 0;

    let class = g.classify_point(&pos)?;
    if class == PointClass::Outside {
        return Err(Error::domain("trace started outside the closed manifold"));
    }
    let speed = vel.norm();
    if speed == 0.0 {
        on_step(&TraceStep::Segment { start: &PhasePoint::new(pos, vel), duration: t });
        return Ok(TraceOutcome {
            end: PhasePoint::new(pos, vel),
            reflections: 0,
            sign: 1,
            status: PathStatus::Ok,
        });
    }

    if class == PointClass::Boundary && g.has_boundary() {
        let n = g.inward_normal(&pos)?;
        let c = vel.dot(&n) / speed;
        if c.abs() < g.grazing_threshold() {
            return Ok(TraceOutcome {
                end: PhasePoint::new(pos, vel),
                reflections: 0,
                sign: 1,
                status: PathStatus::GrazingRejected,
            });
        }
        if c < 0.0 {
            // outward start: reflect immediately, record the time-0 event
            let out = vel - 2.0 * vel.dot(&n) * n;
            on_step(&TraceStep::Reflection { time: 0.0, point: &pos, incoming: &vel, outgoing: &out });
            vel = out;
            sign = -1;
            reflections = 1;
        }
    }

    let corners: Vec<V3> = match g.kind() {
        ModelKind::ImplicitPlanar { level } => level.corners(),
        _ => Vec::new(),
    };

    let mut elapsed = 0.0;
    loop {
        let remaining = t - elapsed;
        if remaining <= 0.0 {
            break;
        }
        let here = PhasePoint::new(pos, vel);
        match g.first_boundary_hit(&here, remaining)? {
            None => {
                on_step(&TraceStep::Segment { start: &here, duration: remaining });
                let adv = g.geodesic_advance(&here, remaining)?;
                pos = adv.position;
                vel = adv.velocity;
                elapsed = t;
            }
            Some(hit) => {
                if hit.incidence_cos < g.grazing_threshold() {
                    return Ok(TraceOutcome {
                        end: here,
                        reflections,
                        sign,
                        status: PathStatus::GrazingRejected,
                    });
                }
                if corners
                    .iter()
                    .any(|c| (hit.point - c).norm() <= g.hit_tolerance())
                {
                    return Ok(TraceOutcome {
                        end: here,
                        reflections,
                        sign,
                        status: PathStatus::CornerRejected,
                    });
                }
                on_step(&TraceStep::Segment { start: &here, duration: hit.time });
                if hit.time >= remaining {
                    // the path ends exactly on the boundary: no reflection
                    pos = hit.point;
                    vel = g.geodesic_advance(&here, hit.time)?.velocity;
                    elapsed = t;
                    continue;
                }
                let v_in = g.geodesic_advance(&here, hit.time)?.velocity;
                let v_out = g.reflect(&hit.point, &v_in)?;
                elapsed += hit.time;
                on_step(&TraceStep::Reflection {
                    time: elapsed,
                    point: &hit.point,
                    incoming: &v_in,
                    outgoing: &v_out,
                });
                reflections += 1;
                if reflections > max_reflections {
                    return Ok(TraceOutcome {
                        end: PhasePoint::new(hit.point, v_out),
                        reflections,
                        sign,
                        status: PathStatus::CapExceeded,
                    });
                }
                pos = hit.point;
                vel = v_out;
            }
        }
    }
    Ok(TraceOutcome {
        end: PhasePoint::new(pos, vel),
        reflections,
        sign,
        status: PathStatus::Ok,
    })
}

/// Trace the reflected geodesic from `(x, v)` over `[0, t]`, recording
/// segments and reflection events.
pub fn trace_reflected(
    g: &GeometryModel,
    x: &V3,
    v: &V3,
    t: f64,
    max_reflections: u32,
) -> Result<ReflectedPath> {
    let mut segments = Vec::new();
    let mut events = Vec::new();
    let outcome = trace_with(g, x, v, t, max_reflections, &mut |step| match *step {
        TraceStep::Segment { start, duration } => {
            segments.push(PathSegment { start: *start, duration })
        }
        TraceStep::Reflection { time, point, incoming, outgoing } => {
            events.push(ReflectionEvent {
                time,
                point: *point,
                incoming: *incoming,
                outgoing: *outgoing,
            })
        }
    })?;
    Ok(ReflectedPath {
        segments,
        events,
        sign: outcome.sign,
        total_time: t,
        status: outcome.status,
        end: outcome.end,
    })
}

/// The broken billiard flow for a signed duration. Negative times use the
/// time-reversal identity (flow the negated velocity forward, negate back).
/// Off the good set the flow is the identity.
pub fn billiard_flow(
    g: &GeometryModel,
    p: &PhasePoint,
    t: f64,
    max_reflections: u32,
) -> Result<FlowResult> {
    if t < 0.0 {
        let rev = trace_reflected(g, &p.position, &(-p.velocity), -t, max_reflections)?;
        let ok = rev.is_ok();
        let final_state = if ok {
            PhasePoint::new(rev.end.position, -rev.end.velocity)
        } else {
            *p
        };
        return Ok(FlowResult {
            final_state,
            reflections: rev.reflections(),
            path: rev,
            in_domain: ok,
        });
    }
    let path = trace_reflected(g, &p.position, &p.velocity, t, max_reflections)?;
    let ok = path.is_ok();
    let final_state = if ok { path.end } else { *p };
    Ok(FlowResult { final_state, reflections: path.reflections(), path, in_domain: ok })
}

/// Kinetic action of the path: one quarter of the integral of the squared
/// speed, which is `|v|^2 t / 4` segment by segment.
pub fn path_energy(path: &ReflectedPath) -> Result<f64> {
    if !path.is_ok() {
        return Err(Error::RejectedPath("energy"));
    }
    Ok(path
        .segments
        .iter()
        .map(|s| 0.25 * s.start.velocity.norm_squared() * s.duration)
        .sum())
}

/// Roll the path out into the starting tangent space, undoing each boundary
/// reflection in the transport. The result is piecewise straight and — for
/// reflected geodesics — has no kink across reflection times.
///
/// Supported on flat models only; the sphere needs curved transport.
pub fn anti_development(g: &GeometryModel, path: &ReflectedPath) -> Result<Vec<V3>> {
    if matches!(g.kind(), ModelKind::Sphere { .. }) {
        return Err(Error::unsupported("anti-development on the sphere"));
    }
    if !path.is_ok() {
        return Err(Error::RejectedPath("anti-development"));
    }
    // accumulated transport inverse: identity, then one boundary reflection
    // appended per event in time order
    let mut transform = Matrix3::<f64>::identity();
    let mut events = path.events.iter().peekable();
    let mut point = V3::zeros();
    let mut polyline = vec![point];
    let mut clock = 0.0;
    for seg in &path.segments {
        while let Some(ev) = events.peek() {
            if ev.time <= clock {
                let d = ev.incoming - ev.outgoing;
                let n = d / d.norm();
                transform *= Matrix3::identity() - 2.0 * n * n.transpose();
                events.next();
            } else {
                break;
            }
        }
        let dir = transform * seg.start.velocity;
        polyline.push(point + dir * (0.5 * seg.duration));
        point += dir * seg.duration;
        polyline.push(point);
        clock += seg.duration;
    }
    Ok(polyline)
}

/// Maximum distance of polyline vertices from the straight line through its
/// endpoints; the straightness figure used by the anti-development checks.
pub fn polyline_deviation(polyline: &[V3]) -> f64 {
    if polyline.len() < 3 {
        return 0.0;
    }
    let a = polyline[0];
    let b = polyline[polyline.len() - 1];
    let chord = b - a;
    let len = chord.norm();
    polyline
        .iter()
        .map(|p| {
            let d = p - a;
            if len == 0.0 {
                d.norm()
            } else {
                (d - chord * (d.dot(&chord) / (len * len))).norm()
            }
        })
        .fold(0.0, f64::max)
}
