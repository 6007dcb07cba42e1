//! The eight model geometries behind one interface.
//!
//! Every state is stored as a pair of 4-vectors:
//!
//! | geometry            | position                  | tangent space              |
//! |---------------------|---------------------------|----------------------------|
//! | E3, NIL, SOL, SL2R  | `(x, y, z, 0)` chart      | `(vx, vy, vz, 0)`          |
//! | S3                  | unit sphere in R^4        | Euclidean-orthogonal to p  |
//! | H3                  | hyperboloid, `w > 0`      | Lorentz-orthogonal to p    |
//! | S2xR                | `(s0, s1, s2, h)`, `|s|=1`| surface part orthogonal to s |
//! | H2xR                | `(x, y, w, h)`, `<s,s>=-1`| surface part Lorentz-orthogonal |
//!
//! The ambient form returned by [`GeometryModel::metric_at`] measures tangent
//! vectors in these coordinates.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{
    cross4, gram_schmidt, lorentz_dot, lorentz_dot_n, BilinearForm, Frame, Mat3, Matrix, Real, Vec3,
    Vec4, Vector,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeometryKind {
    E3,
    S3,
    H3,
    S2xR,
    H2xR,
    Nil,
    Sol,
    Sl2r,
}

impl GeometryKind {
    pub const ALL: [GeometryKind; 8] = [
        GeometryKind::E3,
        GeometryKind::S3,
        GeometryKind::H3,
        GeometryKind::S2xR,
        GeometryKind::H2xR,
        GeometryKind::Nil,
        GeometryKind::Sol,
        GeometryKind::Sl2r,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::E3 => "E3",
            GeometryKind::S3 => "S3",
            GeometryKind::H3 => "H3",
            GeometryKind::S2xR => "S2xR",
            GeometryKind::H2xR => "H2xR",
            GeometryKind::Nil => "NIL",
            GeometryKind::Sol => "SOL",
            GeometryKind::Sl2r => "SL2R",
        }
    }

    /// Geometries whose geodesics are evaluated in closed form.
    pub fn closed_form(self) -> bool {
        !matches!(self, GeometryKind::Sol | GeometryKind::Sl2r)
    }

    /// Geometries stored in a 3-dimensional coordinate chart.
    pub fn is_chart(self) -> bool {
        matches!(
            self,
            GeometryKind::E3 | GeometryKind::Nil | GeometryKind::Sol | GeometryKind::Sl2r
        )
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| !matches!(c, '_' | '-' | ' ')).collect();
        let kind = match norm.to_ascii_uppercase().as_str() {
            "E3" | "EUCLIDEAN" => GeometryKind::E3,
            "S3" | "SPHERICAL" => GeometryKind::S3,
            "H3" | "HYPERBOLIC" => GeometryKind::H3,
            "S2XR" => GeometryKind::S2xR,
            "H2XR" => GeometryKind::H2xR,
            "NIL" => GeometryKind::Nil,
            "SOL" => GeometryKind::Sol,
            "SL2R" | "SL2(R)" => GeometryKind::Sl2r,
            _ => {
                return Err(Error::UnknownManifold {
                    name: s.to_string(),
                    field: "geometry".into(),
                })
            }
        };
        Ok(kind)
    }
}

/// Coordinates in which H3 points are reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Representation {
    #[default]
    Model,
    Klein,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings<T> {
    /// RK4 step in the geodesic parameter.
    pub step: T,
    /// Rescale the velocity to its initial speed every this many steps (0 disables).
    pub renormalize_every: u32,
    /// SL2R: rays with `|1 + x|` below this leave the chart.
    pub chart_margin: T,
    /// SL2R: steps shrink linearly once `|1 + x|` drops below this.
    pub chart_slowdown: T,
    /// SL2R: rays farther than this from the chart origin leave the chart.
    /// Geodesics run off exponentially, and beyond about 1e4 the metric
    /// cancels too strongly for f64 to keep unit speed.
    pub chart_radius: T,
}

impl<T: Real> Default for IntegratorSettings<T> {
    fn default() -> Self {
        IntegratorSettings {
            step: T::lit(1e-2),
            renormalize_every: 16,
            chart_margin: T::lit(1e-4),
            chart_slowdown: T::lit(0.2),
            chart_radius: T::lit(1e4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicState<T> {
    pub position: Vec4<T>,
    pub velocity: Vec4<T>,
}

impl<T: Real> GeodesicState<T> {
    pub fn new(position: Vec4<T>, velocity: Vec4<T>) -> Self {
        GeodesicState { position, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }

    pub fn reversed(&self) -> Self {
        GeodesicState::new(self.position, -self.velocity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryModel<T> {
    kind: GeometryKind,
    representation: Representation,
    integrator: IntegratorSettings<T>,
}

/// Nil closed form switches to its Taylor expansion below this `|w|`.
const NIL_TAYLOR_W: f64 = 1e-4;

impl<T: Real> GeometryModel<T> {
    pub fn new(kind: GeometryKind) -> Self {
        Self::with_settings(kind, IntegratorSettings::default())
    }

    pub fn with_settings(kind: GeometryKind, integrator: IntegratorSettings<T>) -> Self {
        assert!(integrator.step > T::zero(), "integrator step must be positive");
        assert!(integrator.chart_margin > T::zero(), "chart margin must be positive");
        GeometryModel {
            kind,
            representation: Representation::Model,
            integrator,
        }
    }

    /// H3 only: report positions in Klein coordinates from [`Self::local_coords`].
    pub fn with_representation(mut self, representation: Representation) -> Self {
        self.representation = representation;
        self
    }

    #[inline]
    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn integrator(&self) -> &IntegratorSettings<T> {
        &self.integrator
    }

    // ---------------------------------------------------------------- metric

    /// The 3x3 metric matrix of a chart geometry at `p`.
    pub fn chart_metric(&self, p: &Vec3<T>) -> Result<BilinearForm<T, 3>> {
        let one = T::one();
        let zero = T::zero();
        match self.kind {
            GeometryKind::E3 => Ok(BilinearForm::identity()),
            GeometryKind::Nil => {
                let x = p[0];
                BilinearForm::new(Matrix([[one, zero, zero], [zero, x * x + one, -x], [zero, -x, one]]))
            }
            GeometryKind::Sol => {
                let e = (p[2] + p[2]).exp();
                Ok(BilinearForm::diagonal([e, one / e, one]))
            }
            GeometryKind::Sl2r => {
                let a = self.sl2r_chart_factor(p[0])?;
                let (y, z) = (p[1], p[2]);
                let two = T::lit(2.0);
                BilinearForm::new(Matrix([
                    [two * (one + y * z) / (a * a), -z / a, -y / a],
                    [-z / a, zero, one],
                    [-y / a, one, zero],
                ]))
            }
            _ => Err(Error::unsupported("chart_metric", self.kind)),
        }
    }

    /// Ambient form measuring tangent vectors at `p` in state coordinates.
    pub fn metric_at(&self, p: &Vec4<T>) -> Result<BilinearForm<T, 4>> {
        let one = T::one();
        match self.kind {
            GeometryKind::S3 | GeometryKind::S2xR => Ok(BilinearForm::identity()),
            GeometryKind::H3 => Ok(BilinearForm::diagonal([one, one, one, -one])),
            GeometryKind::H2xR => Ok(BilinearForm::diagonal([one, one, -one, one])),
            _ => {
                let g = self.chart_metric(&p.xyz())?;
                let mut m = Matrix::<T, 4>::identity();
                for i in 0..3 {
                    for j in 0..3 {
                        m.0[i][j] = g.matrix().0[i][j];
                    }
                }
                BilinearForm::new(m)
            }
        }
    }

    /// `g_p(u, v)`.
    pub fn dot(&self, p: &Vec4<T>, u: &Vec4<T>, v: &Vec4<T>) -> Result<T> {
        match self.kind {
            GeometryKind::E3 | GeometryKind::S3 | GeometryKind::S2xR => Ok(u.dot(v)),
            GeometryKind::H3 => Ok(lorentz_dot(u, v)),
            _ => Ok(self.metric_at(p)?.dot(u, v)),
        }
    }

    pub fn norm_squared(&self, p: &Vec4<T>, v: &Vec4<T>) -> Result<T> {
        self.dot(p, v, v)
    }

    /// Rescales `v` to `|g(v, v)| = 1`, keeping its causal character.
    pub fn normalize(&self, p: &Vec4<T>, v: &Vec4<T>) -> Result<Vec4<T>> {
        let q = self.norm_squared(p, v)?;
        if !q.is_finite() || q.abs() < T::lit(1e-24) {
            return Err(Error::NumericFailure("cannot normalize a null vector"));
        }
        Ok(*v / q.abs().sqrt())
    }

    fn sl2r_chart_factor(&self, x: T) -> Result<T> {
        let a = T::one() + x;
        if a.abs() < self.integrator.chart_margin || !a.is_finite() {
            Err(Error::OutsideChart)
        } else {
            Ok(a)
        }
    }

    /// Whether `p` lies in the domain where the geometry's coordinates are valid.
    pub fn in_chart(&self, p: &Vec4<T>) -> bool {
        match self.kind {
            GeometryKind::Sl2r => {
                (T::one() + p[0]).abs() >= self.integrator.chart_margin
                    && p.xyz().norm() <= self.integrator.chart_radius
            }
            _ => p.is_finite(),
        }
    }

    // ------------------------------------------------------- model structure

    /// Base point used for default cameras and bundled scenes.
    pub fn origin(&self) -> Vec4<T> {
        let (o, l) = (T::zero(), T::one());
        match self.kind {
            GeometryKind::S3 | GeometryKind::H3 => Vector([o, o, o, l]),
            GeometryKind::S2xR | GeometryKind::H2xR => Vector([o, o, l, o]),
            _ => Vector::zero(),
        }
    }

    /// Tangent vector at `p` whose local components are `(a, b, c)`.
    ///
    /// Products put `c` on the line factor.
    pub fn tangent_from_local(&self, p: &Vec4<T>, v: &Vec3<T>) -> Vec4<T> {
        let raw = match self.kind {
            GeometryKind::S2xR | GeometryKind::H2xR => Vector([v[0], v[1], T::zero(), v[2]]),
            _ => v.extend(T::zero()),
        };
        self.project_tangent(p, &raw)
    }

    /// Lifts local coordinates to a state position: identity for chart
    /// geometries, gnomonic for S3, Klein for H3, and the same on the surface
    /// factor of the products (third coordinate is the height).
    pub fn from_local(&self, x: &Vec3<T>) -> Result<Vec4<T>> {
        let one = T::one();
        match self.kind {
            GeometryKind::S3 => Ok(x.extend(one) / (x.norm_squared() + one).sqrt()),
            GeometryKind::H3 => klein_lift(x),
            GeometryKind::S2xR => {
                let s = Vec3::new(x[0], x[1], one);
                let s = s / s.norm();
                Ok(Vector([s[0], s[1], s[2], x[2]]))
            }
            GeometryKind::H2xR => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 >= one {
                    return Err(Error::OutsideModel);
                }
                let k = one / (one - r2).sqrt();
                Ok(Vector([x[0] * k, x[1] * k, k, x[2]]))
            }
            _ => {
                let p = x.extend(T::zero());
                if self.in_chart(&p) {
                    Ok(p)
                } else {
                    Err(Error::OutsideChart)
                }
            }
        }
    }

    /// Inverse of [`Self::from_local`] on its image. S3 points on the far
    /// hemisphere have no gnomonic image.
    pub fn local_coords(&self, p: &Vec4<T>) -> Result<Vec3<T>> {
        match self.kind {
            GeometryKind::S3 | GeometryKind::H3 => {
                if p[3] <= T::lit(1e-12) {
                    return Err(Error::OutsideModel);
                }
                Ok(p.xyz() / p[3])
            }
            GeometryKind::S2xR | GeometryKind::H2xR => {
                if p[2] <= T::lit(1e-12) {
                    return Err(Error::OutsideModel);
                }
                Ok(Vec3::new(p[0] / p[2], p[1] / p[2], p[3]))
            }
            _ => Ok(p.xyz()),
        }
    }

    /// Local coordinates as shown to users: Klein coordinates for H3 when that
    /// representation is selected, hyperboloid `xyz` otherwise.
    pub fn display_coords(&self, p: &Vec4<T>) -> Result<Vec3<T>> {
        match (self.kind, self.representation) {
            (GeometryKind::H3, Representation::Klein) => klein_project(p),
            (GeometryKind::H3, Representation::Model) => Ok(p.xyz()),
            _ => self.local_coords(p),
        }
    }

    /// Removes the normal component of `v` at `p`.
    pub fn project_tangent(&self, p: &Vec4<T>, v: &Vec4<T>) -> Vec4<T> {
        match self.kind {
            GeometryKind::S3 => *v - *p * p.dot(v),
            GeometryKind::H3 => *v + *p * lorentz_dot(p, v),
            GeometryKind::S2xR => {
                let s = p.xyz();
                let vs = v.xyz();
                let t = vs - s * s.dot(&vs);
                t.extend(v[3])
            }
            GeometryKind::H2xR => {
                let s = p.xyz();
                let vs = v.xyz();
                let t = vs + s * lorentz_dot_n(&s, &vs);
                t.extend(v[3])
            }
            _ => Vector([v[0], v[1], v[2], T::zero()]),
        }
    }

    /// Pulls a position back onto the model and its velocity into the tangent space.
    pub fn reproject(&self, s: &GeodesicState<T>) -> Result<GeodesicState<T>> {
        let p = match self.kind {
            GeometryKind::S3 => s.position / s.position.norm(),
            GeometryKind::H3 => {
                let q = -lorentz_dot(&s.position, &s.position);
                if q <= T::zero() {
                    return Err(Error::OutsideModel);
                }
                s.position / q.sqrt()
            }
            GeometryKind::S2xR => {
                let x = s.position.xyz();
                (x / x.norm()).extend(s.position[3])
            }
            GeometryKind::H2xR => {
                let x = s.position.xyz();
                let q = -lorentz_dot_n(&x, &x);
                if q <= T::zero() {
                    return Err(Error::OutsideModel);
                }
                (x / q.sqrt()).extend(s.position[3])
            }
            _ => Vector([s.position[0], s.position[1], s.position[2], T::zero()]),
        };
        let v = self.project_tangent(&p, &s.velocity);
        let out = GeodesicState::new(p, v);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::NumericFailure("reprojection"))
        }
    }

    /// Residual of the embedding constraint at `p` (0 for chart geometries).
    pub fn constraint_residual(&self, p: &Vec4<T>) -> T {
        let one = T::one();
        match self.kind {
            GeometryKind::S3 => (p.dot(p) - one).abs(),
            GeometryKind::H3 => (lorentz_dot(p, p) + one).abs(),
            GeometryKind::S2xR => (p.xyz().norm_squared() - one).abs(),
            GeometryKind::H2xR => (lorentz_dot_n(&p.xyz(), &p.xyz()) + one).abs(),
            _ => T::zero(),
        }
    }

    /// Completes `(a, b)` to an oriented frame at `p` and orthonormalizes it.
    ///
    /// The third vector is `g^{-1}` of the 4-dimensional cross product with the
    /// position (or `e4` in a chart), so `e1, e2` at the origin of E3 give `e3`.
    pub fn tangent_frame(&self, p: &Vec4<T>, a: &Vec4<T>, b: &Vec4<T>) -> Result<Frame<T, 4>> {
        let a = self.project_tangent(p, a);
        let b = self.project_tangent(p, b);
        let anchor = match self.kind {
            GeometryKind::S3 | GeometryKind::H3 => *p,
            GeometryKind::S2xR | GeometryKind::H2xR => Vector([p[0], p[1], p[2], T::zero()]),
            _ => Vec4::unit(3),
        };
        let g = self.metric_at(p)?;
        let c = cross4(&anchor, &a, &b);
        let w = g.raise(&c)?;
        gram_schmidt(&g, *p, [a, b, w])
    }

    // ----------------------------------------------------------------- flow

    /// Second derivative of the position along the geodesic through `(p, y)`.
    ///
    /// For chart geometries this is `-Γ^k_ij y^i y^j` from the hand-written
    /// equations; for embedded models it is the normal acceleration keeping
    /// the curve on the model.
    pub fn acceleration(&self, p: &Vec4<T>, y: &Vec4<T>) -> Result<Vec4<T>> {
        let two = T::lit(2.0);
        let z = T::zero();
        let acc = match self.kind {
            GeometryKind::E3 => Vec4::zero(),
            GeometryKind::S3 => *p * (-y.dot(y)),
            GeometryKind::H3 => *p * lorentz_dot(y, y),
            GeometryKind::S2xR => {
                let (s, ys) = (p.xyz(), y.xyz());
                (s * (-ys.dot(&ys))).extend(z)
            }
            GeometryKind::H2xR => {
                let (s, ys) = (p.xyz(), y.xyz());
                (s * lorentz_dot_n(&ys, &ys)).extend(z)
            }
            GeometryKind::Nil => {
                let x = p[0];
                let (y1, y2, y3) = (y[0], y[1], y[2]);
                Vector([
                    x * y2 * y2 - y2 * y3,
                    -x * y1 * y2 + y1 * y3,
                    -x * x * y1 * y2 + x * y1 * y3 + y1 * y2,
                    z,
                ])
            }
            GeometryKind::Sol => {
                let pz = p[2];
                let (y1, y2, y3) = (y[0], y[1], y[2]);
                Vector([
                    -two * y1 * y3,
                    two * y2 * y3,
                    (two * pz).exp() * y1 * y1 - (-two * pz).exp() * y2 * y2,
                    z,
                ])
            }
            GeometryKind::Sl2r => {
                // intermediate RK4 stages can run far past the chart before the step ends
                if !self.in_chart(p) {
                    return Err(Error::OutsideChart);
                }
                let a = self.sl2r_chart_factor(p[0])?;
                let (py, pz) = (p[1], p[2]);
                let (y1, y2, y3) = (y[0], y[1], y[2]);
                let k = (T::one() + py * pz) * y1 * y1;
                let a2 = a * a;
                Vector([
                    k / a - pz * y1 * y2 - py * y1 * y3 + a * y2 * y3,
                    k * py / a2 - pz * py / a * y1 * y2 - py * py / a * y1 * y3 + py * y2 * y3,
                    k * pz / a2 - pz * pz / a * y1 * y2 - py * pz / a * y1 * y3 + pz * y2 * y3,
                    z,
                ])
            }
        };
        acc.check_finite("geodesic acceleration")
    }

    /// Right-hand side of the first-order geodesic flow: `(y, a(p, y))`.
    pub fn flow_rhs(&self, s: &GeodesicState<T>) -> Result<GeodesicState<T>> {
        Ok(GeodesicState::new(s.velocity, self.acceleration(&s.position, &s.velocity)?))
    }

    /// `-Γ(y, w)` by polarization of [`Self::acceleration`].
    pub fn connection(&self, p: &Vec4<T>, y: &Vec4<T>, w: &Vec4<T>) -> Result<Vec4<T>> {
        let plus = self.acceleration(p, &(*y + *w))?;
        let minus = self.acceleration(p, &(*y - *w))?;
        Ok((plus - minus) / T::lit(4.0))
    }

    fn step_scale(&self, p: &Vec4<T>) -> T {
        match self.kind {
            GeometryKind::Sl2r => {
                let d = (T::one() + p[0]).abs();
                (d / self.integrator.chart_slowdown).min(T::one())
            }
            _ => T::one(),
        }
    }

    fn rk4_step(&self, s: &GeodesicState<T>, h: T) -> Result<GeodesicState<T>> {
        let half = h / T::lit(2.0);
        let (p, v) = (s.position, s.velocity);
        let a1 = self.acceleration(&p, &v)?;
        let (p2, v2) = (p + v * half, v + a1 * half);
        let a2 = self.acceleration(&p2, &v2)?;
        let (p3, v3) = (p + v2 * half, v + a2 * half);
        let a3 = self.acceleration(&p3, &v3)?;
        let (p4, v4) = (p + v3 * h, v + a3 * h);
        let a4 = self.acceleration(&p4, &v4)?;
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        let out = GeodesicState::new(
            p + (v + v2 * two + v3 * two + v4) * sixth,
            v + (a1 + a2 * two + a3 * two + a4) * sixth,
        );
        if !out.is_finite() {
            return Err(Error::NumericFailure("integrator blow-up"));
        }
        if !self.in_chart(&out.position) {
            return Err(Error::OutsideChart);
        }
        Ok(out)
    }

    /// RK4 integration of the geodesic flow, regardless of closed forms.
    pub fn integrate(&self, start: &GeodesicState<T>, t: T) -> Result<GeodesicState<T>> {
        let mut walker = GeodesicWalker::numeric(self, *start)?;
        walker.advance(t)
    }

    /// The geodesic with initial state `start`, evaluated at parameter `t`.
    pub fn geodesic(&self, start: &GeodesicState<T>, t: T) -> Result<GeodesicState<T>> {
        if !start.is_finite() || !t.is_finite() {
            return Err(Error::NumericFailure("non-finite geodesic input"));
        }
        match self.kind {
            GeometryKind::E3 => Ok(GeodesicState::new(start.position + start.velocity * t, start.velocity)),
            GeometryKind::S3 => Ok(sphere_arc(&start.position, &start.velocity, t)),
            GeometryKind::H3 => Ok(hyperbolic_arc(&start.position, &start.velocity, t)),
            GeometryKind::S2xR | GeometryKind::H2xR => Ok(self.product_geodesic(start, t)),
            GeometryKind::Nil => nil_geodesic(start, t),
            GeometryKind::Sol | GeometryKind::Sl2r => self.integrate(start, t),
        }
    }

    fn product_geodesic(&self, start: &GeodesicState<T>, t: T) -> GeodesicState<T> {
        let (s, vs) = (start.position.xyz(), start.velocity.xyz());
        let arc = if self.kind == GeometryKind::S2xR {
            sphere_arc(&s, &vs, t)
        } else {
            hyperbolic_arc(&s, &vs, t)
        };
        let h = start.position[3] + start.velocity[3] * t;
        let (a, b) = (arc.position, arc.velocity);
        GeodesicState::new(Vector([a[0], a[1], a[2], h]), Vector([b[0], b[1], b[2], start.velocity[3]]))
    }

    /// Parallel transport of `w` (tangent at the start) along the geodesic to parameter `t`.
    pub fn parallel_transport(&self, start: &GeodesicState<T>, t: T, w: &Vec4<T>) -> Result<Vec4<T>> {
        match self.kind {
            GeometryKind::E3 => Ok(*w),
            GeometryKind::S3 | GeometryKind::H3 => {
                let end = self.geodesic(start, t)?;
                Ok(transport_along_arc(self, start, &end, w))
            }
            GeometryKind::S2xR | GeometryKind::H2xR => {
                let end = self.geodesic(start, t)?;
                let surface = |v: &Vec4<T>| Vector([v[0], v[1], v[2], T::zero()]);
                let (p0, v0) = (surface(&start.position), surface(&start.velocity));
                let v1 = surface(&end.velocity);
                let speed2 = self.dot(&p0, &v0, &v0)?;
                let ws = surface(w);
                if speed2 <= T::lit(1e-24) {
                    return Ok(*w);
                }
                let a = self.dot(&p0, &ws, &v0)? / speed2;
                let perp = ws - v0 * a;
                let out = perp + v1 * a;
                Ok(Vector([out[0], out[1], out[2], w[3]]))
            }
            _ => self.transport_numeric(start, t, w),
        }
    }

    /// RK4 on `(p, y, w)` with `w' = -Γ(y, w)`.
    pub fn transport_numeric(&self, start: &GeodesicState<T>, t: T, w: &Vec4<T>) -> Result<Vec4<T>> {
        if t < T::zero() {
            return self.transport_numeric(&start.reversed(), -t, w);
        }
        let (mut p, mut y, mut w) = (start.position, start.velocity, *w);
        let speed2 = self.norm_squared(&p, &y)?;
        let mut done = T::zero();
        let mut steps = 0u32;
        let two = T::lit(2.0);
        while done < t {
            let h = (self.integrator.step * self.step_scale(&p)).min(t - done);
            let half = h / two;
            let f = |p: &Vec4<T>, y: &Vec4<T>, w: &Vec4<T>| -> Result<(Vec4<T>, Vec4<T>)> {
                Ok((self.acceleration(p, y)?, self.connection(p, y, w)?))
            };
            let (a1, b1) = f(&p, &y, &w)?;
            let (p2, y2, w2) = (p + y * half, y + a1 * half, w + b1 * half);
            let (a2, b2) = f(&p2, &y2, &w2)?;
            let (p3, y3, w3) = (p + y2 * half, y + a2 * half, w + b2 * half);
            let (a3, b3) = f(&p3, &y3, &w3)?;
            let (p4, y4, w4) = (p + y3 * h, y + a3 * h, w + b3 * h);
            let (a4, b4) = f(&p4, &y4, &w4)?;
            let sixth = h / T::lit(6.0);
            p = p + (y + y2 * two + y3 * two + y4) * sixth;
            y = y + (a1 + a2 * two + a3 * two + a4) * sixth;
            w = w + (b1 + b2 * two + b3 * two + b4) * sixth;
            if !(p.is_finite() && y.is_finite() && w.is_finite()) {
                return Err(Error::NumericFailure("transport blow-up"));
            }
            if !self.in_chart(&p) {
                return Err(Error::OutsideChart);
            }
            steps += 1;
            if self.integrator.renormalize_every > 0 && steps.is_multiple_of(self.integrator.renormalize_every) {
                y = rescale_speed(self, &p, &y, speed2)?;
            }
            done = done + h;
        }
        Ok(w)
    }

    // ------------------------------------------------------------- distances

    /// Geodesic distance. Closed form only where a global formula exists.
    pub fn distance(&self, p: &Vec4<T>, q: &Vec4<T>) -> Result<T> {
        let two = T::lit(2.0);
        match self.kind {
            GeometryKind::E3 => Ok((*q - *p).norm()),
            GeometryKind::S3 => Ok(sphere_distance(p, q)),
            GeometryKind::H3 => {
                let d = *q - *p;
                let c = lorentz_dot(&d, &d).max(T::zero());
                Ok(two * (c.sqrt() / two).asinh())
            }
            GeometryKind::S2xR | GeometryKind::H2xR => {
                let ds = self.surface_distance(&p.xyz(), &q.xyz());
                let dh = q[3] - p[3];
                Ok((ds * ds + dh * dh).sqrt())
            }
            _ => Err(Error::unsupported("distance", self.kind)),
        }
    }

    fn surface_distance(&self, p: &Vec3<T>, q: &Vec3<T>) -> T {
        let two = T::lit(2.0);
        let d = *q - *p;
        if self.kind == GeometryKind::S2xR {
            two * (d.norm() / two).min(T::one()).asin()
        } else {
            two * (lorentz_dot_n(&d, &d).max(T::zero()).sqrt() / two).asinh()
        }
    }

    /// Unit initial velocity and length of a geodesic from `p` to `q`.
    ///
    /// Closed form in E3, S3, H3 and the products. Elsewhere a damped
    /// shooting method solves the two-point problem from the straight chart
    /// guess; it finds one connecting geodesic, not necessarily the shortest.
    pub fn connect(&self, p: &Vec4<T>, q: &Vec4<T>) -> Result<(Vec4<T>, T)> {
        let tiny = T::lit(1e-14);
        match self.kind {
            GeometryKind::E3 | GeometryKind::S3 | GeometryKind::H3 => {
                let len = self.distance(p, q)?;
                if len < tiny {
                    return Err(Error::NumericFailure("coincident endpoints"));
                }
                let dir = self.normalize(p, &self.project_tangent(p, &(*q - *p)))?;
                Ok((dir, len))
            }
            GeometryKind::S2xR | GeometryKind::H2xR => {
                let len = self.distance(p, q)?;
                if len < tiny {
                    return Err(Error::NumericFailure("coincident endpoints"));
                }
                let ds = self.surface_distance(&p.xyz(), &q.xyz());
                let surf = self.project_tangent(p, &Vector([q[0] - p[0], q[1] - p[1], q[2] - p[2], T::zero()]));
                let n2 = self.dot(p, &surf, &surf)?;
                let surf = if n2 > T::lit(1e-28) {
                    surf * (ds / n2.sqrt())
                } else {
                    Vec4::zero()
                };
                let v = Vector([surf[0], surf[1], surf[2], q[3] - p[3]]) / len;
                Ok((v, len))
            }
            _ => self.shoot(p, q),
        }
    }

    fn shoot(&self, p: &Vec4<T>, q: &Vec4<T>) -> Result<(Vec4<T>, T)> {
        let target = q.xyz();
        let eval = |u: &Vec3<T>| -> Result<Vec3<T>> {
            let len = u.norm();
            let v = u.extend(T::zero()) / len;
            let speed = self.norm_squared(p, &v)?;
            if speed <= T::lit(1e-12) {
                return Err(Error::NumericFailure("shooting direction is not spacelike"));
            }
            let v = v / speed.sqrt();
            let end = self.geodesic(&GeodesicState::new(*p, v), len)?;
            Ok(end.position.xyz() - target)
        };
        // Chart displacement rescaled to the metric length as a first guess.
        let mut u = target - p.xyz();
        if u.norm() < T::lit(1e-14) {
            return Err(Error::NumericFailure("coincident endpoints"));
        }
        let g = self.chart_metric(&p.xyz())?;
        let q2 = g.norm_squared(&u);
        if q2 > T::zero() {
            u = u * (u.norm() / q2.sqrt()).sqrt();
        }
        let mut f = eval(&u)?;
        let tol = T::lit(1e-4);
        let mut jac = numeric_jacobian(&eval, &u, &f)?;
        for _ in 0..20 {
            if f.norm() < tol {
                break;
            }
            let du = crate::tensor::solve(&jac, &(-f)).ok_or(Error::NumericFailure("singular shooting Jacobian"))?;
            let mut lambda = T::one();
            let mut accepted = None;
            for _ in 0..6 {
                let cand = u + du * lambda;
                if let Ok(fc) = eval(&cand) {
                    if fc.norm() < f.norm() {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
                lambda = lambda / T::lit(2.0);
            }
            let Some((cand, fc)) = accepted else {
                return Err(Error::NumericFailure("shooting stalled"));
            };
            // Broyden rank-one update
            let s = cand - u;
            let df = fc - f;
            let ss = s.dot(&s);
            if ss > T::zero() {
                let r = df - jac.mul_vec(&s);
                for i in 0..3 {
                    for j in 0..3 {
                        jac.0[i][j] = jac.0[i][j] + r[i] * s[j] / ss;
                    }
                }
            }
            u = cand;
            f = fc;
        }
        if f.norm() >= tol {
            return Err(Error::NumericFailure("shooting did not converge"));
        }
        let len = u.norm();
        let v = self.normalize(p, &(u.extend(T::zero()) / len))?;
        Ok((v, len))
    }
}

fn numeric_jacobian<T: Real>(
    eval: &impl Fn(&Vec3<T>) -> Result<Vec3<T>>,
    u: &Vec3<T>,
    f: &Vec3<T>,
) -> Result<Mat3<T>> {
    let h = T::lit(1e-6) * (T::one() + u.norm());
    let mut cols = [Vec3::zero(); 3];
    for (j, col) in cols.iter_mut().enumerate() {
        let fj = eval(&(*u + Vec3::unit(j) * h))?;
        *col = (fj - *f) / h;
    }
    Ok(Matrix::from_columns(cols))
}

fn rescale_speed<T: Real>(model: &GeometryModel<T>, p: &Vec4<T>, v: &Vec4<T>, target: T) -> Result<Vec4<T>> {
    let now = model.norm_squared(p, v)?;
    if target.abs() < T::lit(1e-12) || now.abs() < T::lit(1e-12) || now.signum() != target.signum() {
        return Ok(*v);
    }
    Ok(*v * (target / now).sqrt())
}

/// `cos(st) p + sin(st) v/s` on a round sphere of any dimension.
fn sphere_arc<T: Real, const N: usize>(p: &Vector<T, N>, v: &Vector<T, N>, t: T) -> GeodesicState<T>
where
    Vector<T, N>: Into<Vec4<T>> + Copy,
{
    let s = v.norm();
    if s == T::zero() {
        return GeodesicState::new((*p).into(), (*v).into());
    }
    let (sn, cs) = (s * t).sin_cos();
    let pos = *p * cs + *v * (sn / s);
    let vel = *v * cs - *p * (s * sn);
    GeodesicState::new(pos.into(), vel.into())
}

/// `cosh(st) p + sinh(st) v/s` on a hyperboloid of any dimension.
fn hyperbolic_arc<T: Real, const N: usize>(p: &Vector<T, N>, v: &Vector<T, N>, t: T) -> GeodesicState<T>
where
    Vector<T, N>: Into<Vec4<T>> + Copy,
{
    let s = lorentz_dot_n(v, v).max(T::zero()).sqrt();
    if s == T::zero() {
        return GeodesicState::new((*p).into(), (*v).into());
    }
    let (sh, ch) = ((s * t).sinh(), (s * t).cosh());
    let pos = *p * ch + *v * (sh / s);
    let vel = *v * ch + *p * (s * sh);
    GeodesicState::new(pos.into(), vel.into())
}

impl<T: Real> From<Vec3<T>> for Vec4<T> {
    fn from(v: Vec3<T>) -> Self {
        v.extend(T::zero())
    }
}

fn transport_along_arc<T: Real>(
    model: &GeometryModel<T>,
    start: &GeodesicState<T>,
    end: &GeodesicState<T>,
    w: &Vec4<T>,
) -> Vec4<T> {
    let p = start.position;
    let v = start.velocity;
    let speed2 = model.dot(&p, &v, &v).unwrap_or(T::zero());
    if speed2 <= T::lit(1e-24) {
        return *w;
    }
    let a = model.dot(&p, w, &v).unwrap_or(T::zero()) / speed2;
    *w - v * a + end.velocity * a
}

fn sphere_distance<T: Real>(p: &Vec4<T>, q: &Vec4<T>) -> T {
    let two = T::lit(2.0);
    two * ((*q - *p).norm() / two).min(T::one()).asin()
}

/// Left translation in Nil: `(a, b, c) * (x, y, z) = (a + x, b + y, c + z + a y)`.
pub fn nil_multiply<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    Vec3::new(a[0] + b[0], a[1] + b[1], a[2] + b[2] + a[0] * b[1])
}

pub fn nil_inverse<T: Real>(a: &Vec3<T>) -> Vec3<T> {
    Vec3::new(-a[0], -a[1], -a[2] + a[0] * a[1])
}

/// Differential of left translation by `a` in Nil.
pub fn nil_push<T: Real>(a: &Vec3<T>, v: &Vec3<T>) -> Vec3<T> {
    Vec3::new(v[0], v[1], v[2] + a[0] * v[1])
}

/// Sol group law: `(a, b, c) * (x, y, z) = (a + e^{-c} x, b + e^{c} y, c + z)`.
pub fn sol_multiply<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    Vec3::new(a[0] + (-a[2]).exp() * b[0], a[1] + a[2].exp() * b[1], a[2] + b[2])
}

pub fn sol_inverse<T: Real>(a: &Vec3<T>) -> Vec3<T> {
    Vec3::new(-a[2].exp() * a[0], -(-a[2]).exp() * a[1], -a[2])
}

pub fn sol_push<T: Real>(a: &Vec3<T>, v: &Vec3<T>) -> Vec3<T> {
    Vec3::new((-a[2]).exp() * v[0], a[2].exp() * v[1], v[2])
}

fn nil_geodesic<T: Real>(start: &GeodesicState<T>, t: T) -> Result<GeodesicState<T>> {
    let p = start.position.xyz();
    let v = start.velocity;
    // pull the velocity back to the identity
    let u = Vec3::new(v[0], v[1], v[2] - p[0] * v[1]);
    let c = (u[0] * u[0] + u[1] * u[1]).sqrt();
    let alpha = u[1].atan2(u[0]);
    let w = u[2];
    let (q, qd) = nil_from_identity(c, alpha, w, t);
    let pos = nil_multiply(&p, &q);
    let vel = nil_push(&p, &qd);
    let out = GeodesicState::new(pos.extend(T::zero()), vel.extend(T::zero()));
    out.position.check_finite("nil geodesic")?;
    Ok(out)
}

/// Nil geodesic from the identity with horizontal speed `c` in direction
/// `alpha` and vertical left-invariant speed `w`.
fn nil_from_identity<T: Real>(c: T, alpha: T, w: T, t: T) -> (Vec3<T>, Vec3<T>) {
    let l = T::lit;
    let (sa, ca) = alpha.sin_cos();
    let phase = w * t + alpha;
    let (sp, cp) = phase.sin_cos();
    let wt = w * t;
    let pos = if w.abs() < l(NIL_TAYLOR_W) && wt.abs() < l(1e-2) {
        let (t2, t3) = (t * t, t * t * t);
        let (w2, w3) = (w * w, w * w * w);
        let c2 = c * c;
        let s2a = (alpha + alpha).sin();
        let c2a = (alpha + alpha).cos();
        let x = c * t * (l(24.0) * ca - l(12.0) * wt * sa - l(4.0) * wt * wt * ca + wt * wt * wt * sa) / l(24.0);
        let y = c * t * (l(24.0) * sa + l(12.0) * wt * ca - l(4.0) * wt * wt * sa - wt * wt * wt * ca) / l(24.0);
        let z = t
            * (c2 * t3 * t * w3 * (l(30.0) * sa * sa - l(16.0)) - l(35.0) * c2 * t3 * w2 * s2a
                + l(60.0) * c2 * t * s2a
                + l(20.0) * w * (l(3.0) * c2 * t2 * c2a + c2 * t2 + l(12.0)))
            / l(240.0);
        Vec3::new(x, y, z)
    } else {
        let k = c / w;
        let x = k * (sp - sa);
        let y = -k * (cp - ca);
        let c2 = c * c;
        let s2a = (alpha + alpha).sin();
        let z = t * (w + c2 / (l(2.0) * w)) - c2 / (l(4.0) * w * w) * ((wt + wt + alpha + alpha).sin() - s2a)
            + c2 / (l(2.0) * w * w) * ((wt + alpha + alpha).sin() - s2a - wt.sin());
        Vec3::new(x, y, z)
    };
    let yd = c * sp;
    let vel = Vec3::new(c * cp, yd, w + pos[0] * yd);
    (pos, vel)
}

/// Projection from the hyperboloid to the Klein ball, `p ↦ p_xyz / p_w`.
pub fn klein_project<T: Real>(p: &Vec4<T>) -> Result<Vec3<T>> {
    if p[3] <= T::zero() {
        return Err(Error::OutsideModel);
    }
    Ok(p.xyz() / p[3])
}

/// Inverse of [`klein_project`]; fails outside the open unit ball.
pub fn klein_lift<T: Real>(x: &Vec3<T>) -> Result<Vec4<T>> {
    let r2 = x.norm_squared();
    if r2 >= T::one() {
        return Err(Error::OutsideModel);
    }
    let k = T::one() / (T::one() - r2).sqrt();
    Ok(x.extend(T::one()) * k)
}

/// Steps a geodesic forward incrementally, as the ray marcher does.
///
/// Closed-form geometries evaluate from the initial state every time, so no
/// error accumulates. Integrated geometries keep a running RK4 state and a
/// step counter shared across calls, so renormalization happens at the same
/// cadence however the ray is sliced.
#[derive(Clone, Debug)]
pub struct GeodesicWalker<'a, T> {
    model: &'a GeometryModel<T>,
    start: GeodesicState<T>,
    current: GeodesicState<T>,
    t: T,
    steps: u32,
    speed2: T,
    numeric: bool,
}

impl<'a, T: Real> GeodesicWalker<'a, T> {
    pub fn new(model: &'a GeometryModel<T>, start: GeodesicState<T>) -> Result<Self> {
        Self::build(model, start, !model.kind().closed_form())
    }

    /// Forces RK4 integration even where a closed form exists.
    pub fn numeric(model: &'a GeometryModel<T>, start: GeodesicState<T>) -> Result<Self> {
        Self::build(model, start, true)
    }

    fn build(model: &'a GeometryModel<T>, start: GeodesicState<T>, numeric: bool) -> Result<Self> {
        if !start.is_finite() {
            return Err(Error::NumericFailure("non-finite start state"));
        }
        if !model.in_chart(&start.position) {
            return Err(Error::OutsideChart);
        }
        let speed2 = model.norm_squared(&start.position, &start.velocity)?;
        Ok(GeodesicWalker {
            model,
            start,
            current: start,
            t: T::zero(),
            steps: 0,
            speed2,
            numeric,
        })
    }

    #[inline]
    pub fn t(&self) -> T {
        self.t
    }

    #[inline]
    pub fn state(&self) -> &GeodesicState<T> {
        &self.current
    }

    /// Moves forward by `dt` and returns the new state.
    pub fn advance(&mut self, dt: T) -> Result<GeodesicState<T>> {
        if !self.numeric {
            let t = self.t + dt;
            self.current = self.model.geodesic(&self.start, t)?;
            self.t = t;
            return Ok(self.current);
        }
        let cfg = self.model.integrator;
        let mut left = dt;
        while left > T::zero() {
            let h = (cfg.step * self.model.step_scale(&self.current.position)).min(left);
            let next = self.model.rk4_step(&self.current, h)?;
            self.current = next;
            self.steps += 1;
            if cfg.renormalize_every > 0 && self.steps.is_multiple_of(cfg.renormalize_every) {
                self.current.velocity = rescale_speed(self.model, &next.position, &next.velocity, self.speed2)?;
            }
            self.t = self.t + h;
            left = left - h;
        }
        Ok(self.current)
    }

    /// The state `dt` ahead of the current one, without moving.
    pub fn peek(&self, dt: T) -> Result<GeodesicState<T>> {
        Ok(self.lookahead(dt)?.state)
    }

    /// Like [`Self::peek`], keeping what [`Self::commit`] needs to accept it.
    pub fn lookahead(&self, dt: T) -> Result<Lookahead<T>> {
        if !self.numeric {
            let state = self.model.geodesic(&self.start, self.t + dt)?;
            return Ok(Lookahead { state, dt, steps: 0 });
        }
        let mut s = self.current;
        let mut left = dt;
        let mut steps = 0;
        while left > T::zero() {
            let h = (self.model.integrator.step * self.model.step_scale(&s.position)).min(left);
            s = self.model.rk4_step(&s, h)?;
            left = left - h;
            steps += 1;
        }
        Ok(Lookahead { state: s, dt, steps })
    }

    /// Moves to a state produced by [`Self::lookahead`] from the current one.
    pub fn commit(&mut self, ahead: Lookahead<T>) -> Result<()> {
        self.t = self.t + ahead.dt;
        self.current = ahead.state;
        if !self.numeric {
            return Ok(());
        }
        let every = self.model.integrator.renormalize_every;
        let before = self.steps;
        self.steps += ahead.steps;
        if every > 0 && before / every != self.steps / every {
            self.current.velocity =
                rescale_speed(self.model, &self.current.position, &self.current.velocity, self.speed2)?;
        }
        Ok(())
    }
}

/// A state ahead of a walker, not yet committed.
#[derive(Clone, Copy, Debug)]
pub struct Lookahead<T> {
    pub state: GeodesicState<T>,
    pub dt: T,
    steps: u32,
}
