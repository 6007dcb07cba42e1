//! Scene primitives and geodesic ray marching through a quotient.

use crate::error::{Error, Result};
use crate::geometry::{GeodesicWalker, GeometryKind};
use crate::quotient::{Isometry, QuotientManifold};
use crate::{GeodesicState, Geometry, Vec3, Vec4};

pub const DEFAULT_MARCH_STEP: f64 = 0.02;
pub const BISECTION_STEPS: usize = 40;
pub const BISECTION_TOL: f64 = 1e-6;
/// Smallest advance when sphere tracing, so grazing rays keep moving.
const MIN_TRACE_STEP: f64 = 1e-3;
/// Central-difference step for surface normals.
const NORMAL_STEP: f64 = 1e-5;

pub type Rgb = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveKind {
    Ball,
    Tube,
    Light,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub albedo: Rgb,
    pub emission: Rgb,
}

impl Material {
    pub fn diffuse(albedo: Rgb) -> Self {
        Material {
            albedo,
            emission: [0.0; 3],
        }
    }

    pub fn emissive(emission: Rgb) -> Self {
        Material {
            albedo: [0.0; 3],
            emission,
        }
    }

    pub fn is_emitter(&self) -> bool {
        self.emission.iter().any(|&e| e > 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Geodesic ball around a model point (chart-coordinate ball where no
    /// global distance formula exists).
    Ball { center: Vec4, local: Vec3, radius: f64 },
    /// Thickened segment between two points given in local coordinates.
    Tube { a: Vec3, b: Vec3, radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub shape: Shape,
    pub material: Material,
    /// Flips inside and outside, turning a ball into an enclosure.
    pub inverted: bool,
}

impl Primitive {
    /// Ball centred at `local` coordinates (see [`Geometry::from_local`]).
    pub fn ball(geom: &Geometry, local: Vec3, radius: f64, material: Material) -> Result<Self> {
        check_radius(radius)?;
        let kind = if material.is_emitter() {
            PrimitiveKind::Light
        } else {
            PrimitiveKind::Ball
        };
        Ok(Primitive {
            kind,
            shape: Shape::Ball {
                center: geom.from_local(&local)?,
                local,
                radius,
            },
            material,
            inverted: false,
        })
    }

    pub fn tube(a: Vec3, b: Vec3, radius: f64, material: Material) -> Result<Self> {
        check_radius(radius)?;
        Ok(Primitive {
            kind: PrimitiveKind::Tube,
            shape: Shape::Tube { a, b, radius },
            material,
            inverted: false,
        })
    }

    pub fn inverted(mut self) -> Self {
        self.inverted = true;
        self
    }

    pub fn center(&self) -> Option<Vec4> {
        match self.shape {
            Shape::Ball { center, .. } => Some(center),
            Shape::Tube { .. } => None,
        }
    }

    pub fn radius(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius, .. } | Shape::Tube { radius, .. } => radius,
        }
    }

    /// Whether [`inside_outside`] is a true geodesic distance (minus radius).
    pub fn exact_distance(&self, kind: GeometryKind) -> bool {
        match self.shape {
            Shape::Ball { .. } => !matches!(kind, GeometryKind::Nil | GeometryKind::Sol | GeometryKind::Sl2r),
            Shape::Tube { .. } => kind == GeometryKind::E3,
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::schema("radius", "radius > 0 is required"))
    }
}

/// Implicit function of a primitive: negative inside, positive outside.
///
/// Balls in E3, S3, H3 and the products return `distance − radius`. Other
/// balls and all tubes use Euclidean distance in local coordinates.
pub fn inside_outside(prim: &Primitive, geom: &Geometry, p: &Vec4) -> Result<f64> {
    let d = match prim.shape {
        Shape::Ball { center, local, radius } => {
            let d = if prim.exact_distance(geom.kind()) {
                geom.distance(&center, p)?
            } else {
                if !geom.in_chart(p) {
                    return Err(Error::OutsideChart);
                }
                (p.xyz() - local).norm()
            };
            d - radius
        }
        Shape::Tube { a, b, radius } => match geom.local_coords(p) {
            Ok(x) => segment_distance(&x, &a, &b) - radius,
            // far hemisphere of S3 has no gnomonic image
            Err(Error::OutsideModel) => 1e3,
            Err(e) => return Err(e),
        },
    };
    Ok(if prim.inverted { -d } else { d })
}

fn segment_distance(x: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = *b - *a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 {
        ((*x - *a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (*x - (*a + ab * s)).norm()
}

/// Unit normal of a primitive at `p`: the gradient of [`inside_outside`],
/// raised by the metric and normalized.
pub fn surface_normal(prim: &Primitive, geom: &Geometry, p: &Vec4) -> Result<Vec4> {
    let mut grad = Vec4::zero();
    let axes = if geom.kind().is_chart() { 3 } else { 4 };
    for i in 0..axes {
        let mut e = Vec4::zero();
        e[i] = NORMAL_STEP;
        let fp = inside_outside(prim, geom, &(*p + e))?;
        let fm = inside_outside(prim, geom, &(*p - e))?;
        grad[i] = (fp - fm) / (2.0 * NORMAL_STEP);
    }
    if grad.norm() < 1e-8 {
        return Err(Error::DegenerateNormal);
    }
    let raised = geom.metric_at(p)?.raise(&grad)?;
    let tangent = geom.project_tangent(p, &raised);
    let q = geom.norm_squared(p, &tangent)?;
    if q.abs() < 1e-16 {
        return Err(Error::DegenerateNormal);
    }
    Ok(tangent / q.abs().sqrt())
}

#[derive(Clone, Debug, Default)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Scene { primitives }
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn lights(&self) -> impl Iterator<Item = (usize, &Primitive)> {
        self.primitives
            .iter()
            .enumerate()
            .filter(|(_, p)| p.material.is_emitter() && p.center().is_some() && !p.inverted)
    }

    fn values(&self, geom: &Geometry, p: &Vec4, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for prim in &self.primitives {
            out.push(inside_outside(prim, geom, p)?);
        }
        Ok(())
    }

    /// Largest safe advance from `p`: the smallest exact distance field, capped.
    fn safe_step(&self, kind: GeometryKind, values: &[f64], cap: f64) -> f64 {
        let mut step = cap;
        for (prim, &v) in self.primitives.iter().zip(values) {
            if prim.exact_distance(kind) {
                step = step.min(v.max(MIN_TRACE_STEP));
            }
        }
        step
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: GeodesicState,
    pub t_max: f64,
    pub max_crossings: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Position on the surface and incoming velocity, in domain coordinates.
    pub state: GeodesicState,
    pub primitive: usize,
    /// Unit normal facing against the incoming velocity.
    pub normal: Vec4,
    pub crossings: u32,
    /// Composite of all boundary isometries applied on the way.
    pub holonomy: Isometry,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MarchOutcome {
    Hit(Hit),
    /// Ran out of length or crossing budget; carries the final state.
    Miss { state: GeodesicState, crossings: u32 },
}

impl MarchOutcome {
    pub fn hit(&self) -> Option<&Hit> {
        match self {
            MarchOutcome::Hit(h) => Some(h),
            MarchOutcome::Miss { .. } => None,
        }
    }
}

/// Marching parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarchSettings {
    pub step: f64,
}

impl Default for MarchSettings {
    fn default() -> Self {
        MarchSettings {
            step: DEFAULT_MARCH_STEP,
        }
    }
}

/// Finds the first zero of any primitive's implicit function along the ray,
/// applying boundary crossings as the ray leaves the fundamental domain.
pub fn march(manifold: &QuotientManifold, scene: &Scene, ray: &Ray, settings: &MarchSettings) -> Result<MarchOutcome> {
    let geom = &manifold.geometry;
    let kind = geom.kind();
    let domain = &manifold.domain;
    let mut crossings = 0u32;
    let mut holonomy = Isometry::identity(kind);
    let mut travelled = 0.0;
    let mut walker = GeodesicWalker::new(geom, ray.origin)?;
    let mut prev = Vec::with_capacity(scene.primitives.len());
    let mut next = Vec::with_capacity(scene.primitives.len());
    scene.values(geom, &walker.state().position, &mut prev)?;
    let bare = manifold.is_bare();

    loop {
        let remaining = ray.t_max - travelled;
        if remaining <= 0.0 {
            return Ok(MarchOutcome::Miss {
                state: *walker.state(),
                crossings,
            });
        }
        let step = scene.safe_step(kind, &prev, settings.step).min(remaining);
        let ahead = walker.lookahead(step)?;
        let leaves = !bare && domain.signed_value(&ahead.state.position) > 0.0;
        let span = if leaves {
            // locate the boundary first, then look for hits before it
            bisect(step, |dt| Ok(domain.signed_value(&walker.peek(dt)?.position)), true, 0.0)?
        } else {
            step
        };
        let end = if leaves { walker.peek(span)? } else { ahead.state };
        scene.values(geom, &end.position, &mut next)?;
        let mut best: Option<(f64, usize)> = None;
        for (i, (&a, &b)) in prev.iter().zip(&next).enumerate() {
            if a > 0.0 && b <= 0.0 {
                let prim = &scene.primitives[i];
                let tau = bisect(span, |dt| inside_outside(prim, geom, &walker.peek(dt)?.position), false, BISECTION_TOL)?;
                if best.is_none_or(|(t, _)| tau < t) {
                    best = Some((tau, i));
                }
            }
        }
        if let Some((tau, i)) = best {
            let state = walker.peek(tau)?;
            let prim = &scene.primitives[i];
            let mut normal = surface_normal(prim, geom, &state.position)?;
            if geom.dot(&state.position, &normal, &state.velocity)? > 0.0 {
                normal = -normal;
            }
            return Ok(MarchOutcome::Hit(Hit {
                t: travelled + tau,
                state,
                primitive: i,
                normal,
                crossings,
                holonomy,
            }));
        }
        if leaves {
            if crossings >= ray.max_crossings {
                return Ok(MarchOutcome::Miss { state: end, crossings });
            }
            let (inside, g) = manifold.cross_boundary(&end)?;
            crossings += 1;
            holonomy = g.compose(&holonomy)?;
            travelled += span + crate::quotient::CROSSING_EPSILON;
            walker = GeodesicWalker::new(geom, inside)?;
            scene.values(geom, &inside.position, &mut prev)?;
        } else {
            walker.commit(ahead)?;
            travelled += step;
            std::mem::swap(&mut prev, &mut next);
        }
    }
}

/// Parameter in `(0, span]` where `f` turns positive (`rising`) or turns
/// non-positive, assuming the sign change happens inside the interval.
/// Stops early once `|f| < tol`.
fn bisect(span: f64, f: impl Fn(f64) -> Result<f64>, rising: bool, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, span);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if v.abs() < tol {
            return Ok(mid);
        }
        let past = if rising { v > 0.0 } else { v <= 0.0 };
        if past {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // the crossing side keeps the state consistent with the sign change
    Ok(hi)
}
