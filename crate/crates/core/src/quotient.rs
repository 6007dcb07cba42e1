//! Compact quotients: fundamental domains, face pairings and gluing checks.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{nil_inverse, nil_multiply, nil_push, sol_inverse, sol_multiply, sol_push, GeometryKind};
use crate::tensor::{lorentz_dot, Matrix, Vector};
use crate::{GeodesicState, Geometry, Mat4, Vec3, Vec4};

/// Distance pushed past a face after a crossing.
pub const CROSSING_EPSILON: f64 = 1e-5;
/// A position counts as outside once some face function exceeds this.
const OUTSIDE_TOL: f64 = 1e-9;
const MAX_REDUCTIONS: usize = 16;

/// An isometry of one of the model geometries, in the form its pairings need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Isometry {
    /// Homogeneous 4x4 matrix acting on `(x, y, z, 1)` (E3).
    Affine(Mat4),
    /// Linear map of R^4 (S3 orthogonal, H3 Lorentz).
    Linear(Mat4),
    /// Left multiplication in Nil.
    Nil(Vec3),
    /// Left multiplication in Sol.
    Sol(Vec3),
}

impl Isometry {
    pub fn identity(kind: GeometryKind) -> Self {
        match kind {
            GeometryKind::S3 | GeometryKind::H3 => Isometry::Linear(Matrix::identity()),
            GeometryKind::Nil => Isometry::Nil(Vec3::zero()),
            GeometryKind::Sol => Isometry::Sol(Vec3::zero()),
            _ => Isometry::Affine(Matrix::identity()),
        }
    }

    pub fn translation(t: Vec3) -> Self {
        let mut m = Mat4::identity();
        for i in 0..3 {
            m.0[i][3] = t[i];
        }
        Isometry::Affine(m)
    }

    pub fn apply_point(&self, p: &Vec4) -> Vec4 {
        match self {
            Isometry::Affine(m) => {
                let q = m.mul_vec(&p.xyz().extend(1.0));
                q.xyz().extend(0.0)
            }
            Isometry::Linear(m) => m.mul_vec(p),
            Isometry::Nil(a) => nil_multiply(a, &p.xyz()).extend(0.0),
            Isometry::Sol(a) => sol_multiply(a, &p.xyz()).extend(0.0),
        }
    }

    /// Differential at `p` applied to the tangent vector `v`.
    pub fn apply_vector(&self, _p: &Vec4, v: &Vec4) -> Vec4 {
        match self {
            Isometry::Affine(m) => m.mul_vec(&v.xyz().extend(0.0)).xyz().extend(0.0),
            Isometry::Linear(m) => m.mul_vec(v),
            Isometry::Nil(a) => nil_push(a, &v.xyz()).extend(0.0),
            Isometry::Sol(a) => sol_push(a, &v.xyz()).extend(0.0),
        }
    }

    pub fn apply_state(&self, s: &GeodesicState) -> GeodesicState {
        GeodesicState::new(self.apply_point(&s.position), self.apply_vector(&s.position, &s.velocity))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Isometry) -> Result<Isometry> {
        Ok(match (self, other) {
            (Isometry::Affine(a), Isometry::Affine(b)) => Isometry::Affine(a.mul_mat(b)),
            (Isometry::Linear(a), Isometry::Linear(b)) => Isometry::Linear(a.mul_mat(b)),
            (Isometry::Nil(a), Isometry::Nil(b)) => Isometry::Nil(nil_multiply(a, b)),
            (Isometry::Sol(a), Isometry::Sol(b)) => Isometry::Sol(sol_multiply(a, b)),
            _ => return Err(Error::InvalidGluing("composing isometries of different geometries".into())),
        })
    }

    pub fn inverse(&self) -> Result<Isometry> {
        Ok(match self {
            Isometry::Affine(m) => Isometry::Affine(m.inverse().ok_or(Error::NumericFailure("singular isometry"))?),
            Isometry::Linear(m) => Isometry::Linear(m.inverse().ok_or(Error::NumericFailure("singular isometry"))?),
            Isometry::Nil(a) => Isometry::Nil(nil_inverse(a)),
            Isometry::Sol(a) => Isometry::Sol(sol_inverse(a)),
        })
    }

    /// Max-abs difference of the representations; infinite across kinds.
    pub fn distance(&self, other: &Isometry) -> f64 {
        match (self, other) {
            (Isometry::Affine(a), Isometry::Affine(b)) | (Isometry::Linear(a), Isometry::Linear(b)) => {
                a.max_abs_diff(b)
            }
            (Isometry::Nil(a), Isometry::Nil(b)) | (Isometry::Sol(a), Isometry::Sol(b)) => a.max_abs_diff(b),
            _ => f64::INFINITY,
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let id = match self {
            Isometry::Affine(_) => Isometry::Affine(Matrix::identity()),
            Isometry::Linear(_) => Isometry::Linear(Matrix::identity()),
            Isometry::Nil(_) => Isometry::Nil(Vec3::zero()),
            Isometry::Sol(_) => Isometry::Sol(Vec3::zero()),
        };
        self.distance(&id) <= tol
    }

    fn matches(&self, kind: GeometryKind) -> bool {
        matches!(
            (self, kind),
            (Isometry::Affine(_), GeometryKind::E3)
                | (Isometry::Linear(_), GeometryKind::S3 | GeometryKind::H3)
                | (Isometry::Nil(_), GeometryKind::Nil)
                | (Isometry::Sol(_), GeometryKind::Sol)
        )
    }
}

/// A boundary face: the zero set of a linear functional of the homogeneous
/// position (`(x, y, z, 1)` in a chart, the point itself in S3/H3).
/// Negative inside.
#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub id: usize,
    pub functional: Vec4,
    /// Indices into [`FundamentalDomain::vertices`].
    pub vertices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FundamentalDomain {
    pub geometry: GeometryKind,
    pub faces: Vec<Face>,
    /// Polytope vertices as model positions.
    pub vertices: Vec<Vec4>,
}

impl FundamentalDomain {
    fn homogeneous(&self, p: &Vec4) -> Vec4 {
        match self.geometry {
            GeometryKind::S3 | GeometryKind::H3 => *p,
            _ => p.xyz().extend(1.0),
        }
    }

    pub fn face_value(&self, face: usize, p: &Vec4) -> f64 {
        self.faces[face].functional.dot(&self.homogeneous(p))
    }

    /// Largest face value and its face; `None` for a domain without faces.
    pub fn max_face(&self, p: &Vec4) -> Option<(usize, f64)> {
        let h = self.homogeneous(p);
        self.faces
            .iter()
            .enumerate()
            .map(|(i, f)| (i, f.functional.dot(&h)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// `max_j f_j(p)`, or `-inf` when there are no faces.
    pub fn signed_value(&self, p: &Vec4) -> f64 {
        self.max_face(p).map_or(f64::NEG_INFINITY, |(_, v)| v)
    }

    pub fn contains(&self, p: &Vec4, tol: f64) -> bool {
        self.signed_value(p) <= tol
    }

    /// Unit outward normal of a face in the ambient form.
    fn face_normal(&self, face: usize) -> Vec4 {
        let f = self.faces[face].functional;
        match self.geometry {
            GeometryKind::S3 => f / f.norm(),
            GeometryKind::H3 => {
                let m = Vector([f[0], f[1], f[2], -f[3]]);
                m / lorentz_dot(&m, &m).sqrt()
            }
            _ => {
                let n = f.xyz();
                (n / n.norm()).extend(0.0)
            }
        }
    }

    /// Interior dihedral angle between two faces meeting along an edge.
    pub fn dihedral_angle(&self, a: usize, b: usize) -> f64 {
        let (ma, mb) = (self.face_normal(a), self.face_normal(b));
        let c = match self.geometry {
            GeometryKind::H3 => lorentz_dot(&ma, &mb),
            _ => ma.dot(&mb),
        };
        PI - c.clamp(-1.0, 1.0).acos()
    }

    /// Vertex pairs shared by exactly two faces.
    pub fn edges(&self) -> Vec<(usize, usize, [usize; 2])> {
        let mut out = Vec::new();
        for a in 0..self.vertices.len() {
            for b in (a + 1)..self.vertices.len() {
                let shared: Vec<usize> = self
                    .faces
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| f.vertices.contains(&a) && f.vertices.contains(&b))
                    .map(|(i, _)| i)
                    .collect();
                if shared.len() == 2 {
                    out.push((a, b, [shared[0], shared[1]]));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FacePairing {
    pub source: usize,
    pub target: usize,
    /// Maps the source face onto the target face, taking the region just
    /// outside the source into the domain.
    pub isometry: Isometry,
}

/// Counts of identified cells after gluing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GluingComplex {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub cells: usize,
    /// Number of domain edges in each identified edge class.
    pub edge_cycles: Vec<usize>,
    /// False when the counts were declared instead of derived from the pairings.
    pub derived: bool,
}

pub fn euler_characteristic(c: &GluingComplex) -> i64 {
    c.vertices as i64 - c.edges as i64 + c.faces as i64 - c.cells as i64
}

/// Size of the group generated by `generators`, deduplicated at `1e-6`.
pub fn orbit_size(generators: &[Isometry], max_elements: usize) -> Result<usize> {
    let Some(first) = generators.first() else {
        return Ok(1);
    };
    let identity = match first {
        Isometry::Affine(_) => Isometry::Affine(Matrix::identity()),
        Isometry::Linear(_) => Isometry::Linear(Matrix::identity()),
        Isometry::Nil(_) => Isometry::Nil(Vec3::zero()),
        Isometry::Sol(_) => Isometry::Sol(Vec3::zero()),
    };
    let mut elements = vec![identity];
    let mut next = 0;
    while next < elements.len() {
        let e = elements[next];
        next += 1;
        for g in generators {
            let h = g.compose(&e)?;
            if elements.iter().all(|x| x.distance(&h) > 1e-6) {
                elements.push(h);
                if elements.len() > max_elements {
                    return Err(Error::Overflow(max_elements));
                }
            }
        }
    }
    Ok(elements.len())
}

#[derive(Clone, Debug)]
pub struct QuotientManifold {
    pub name: String,
    pub geometry: Geometry,
    pub domain: FundamentalDomain,
    pub pairings: Vec<FacePairing>,
    pub complex: GluingComplex,
}

/// Result of checking gluing data.
#[derive(Clone, Debug)]
pub struct GluingReport {
    pub complex: GluingComplex,
    pub euler: i64,
    /// Smallest and largest dihedral angle over all edges, in degrees.
    pub dihedral_range: Option<(f64, f64)>,
    /// `max |Σ angles − 2π|` over edge classes.
    pub edge_angle_residual: Option<f64>,
    /// `max |g_i ∘ g_i' − id|` over pairings.
    pub roundtrip_residual: f64,
    /// Max distance from mapped source vertices to the target face (and its
    /// vertex set when the complex is derived).
    pub face_map_residual: f64,
    pub unpaired_faces: Vec<usize>,
}

impl GluingReport {
    pub fn ok(&self) -> bool {
        self.euler == 0
            && self.unpaired_faces.is_empty()
            && self.roundtrip_residual < 1e-9
            && self.face_map_residual < 1e-9
            && self.edge_angle_residual.is_none_or(|r| r < 1e-4)
    }
}

/// Union-find over small index sets.
struct Classes(Vec<usize>);

impl Classes {
    fn new(n: usize) -> Self {
        Classes((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut j = i;
        while self.0[j] != r {
            let n = self.0[j];
            self.0[j] = r;
            j = n;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
    fn sizes(&mut self) -> Vec<usize> {
        let n = self.0.len();
        let mut count = vec![0; n];
        for i in 0..n {
            let r = self.find(i);
            count[r] += 1;
        }
        count.into_iter().filter(|&c| c > 0).collect()
    }
}

impl QuotientManifold {
    /// The model geometry itself, without identifications.
    pub fn bare(geometry: Geometry) -> Self {
        QuotientManifold {
            name: geometry.kind().name().to_string(),
            domain: FundamentalDomain {
                geometry: geometry.kind(),
                faces: Vec::new(),
                vertices: Vec::new(),
            },
            geometry,
            pairings: Vec::new(),
            complex: GluingComplex {
                vertices: 0,
                edges: 0,
                faces: 0,
                cells: 1,
                edge_cycles: Vec::new(),
                derived: false,
            },
        }
    }

    /// Builds a manifold from explicit data, deriving the gluing complex from
    /// the pairings when `declared` is `None`.
    pub fn from_parts(
        name: impl Into<String>,
        geometry: Geometry,
        domain: FundamentalDomain,
        pairings: Vec<FacePairing>,
        declared: Option<GluingComplex>,
    ) -> Result<Self> {
        for p in &pairings {
            if p.source >= domain.faces.len() || p.target >= domain.faces.len() {
                return Err(Error::InvalidGluing(format!(
                    "pairing {} -> {} references a missing face",
                    p.source, p.target
                )));
            }
            if !p.isometry.matches(geometry.kind()) {
                return Err(Error::InvalidGluing(format!(
                    "pairing {} -> {} does not act on {}",
                    p.source,
                    p.target,
                    geometry.kind()
                )));
            }
        }
        let mut m = QuotientManifold {
            name: name.into(),
            geometry,
            domain,
            pairings,
            complex: GluingComplex {
                vertices: 0,
                edges: 0,
                faces: 0,
                cells: 1,
                edge_cycles: Vec::new(),
                derived: false,
            },
        };
        m.complex = match declared {
            Some(c) => c,
            None => m.derive_complex()?,
        };
        Ok(m)
    }

    pub fn is_bare(&self) -> bool {
        self.domain.faces.is_empty()
    }

    pub fn kind(&self) -> GeometryKind {
        self.geometry.kind()
    }

    pub fn pairing_for(&self, face: usize) -> Result<&FacePairing> {
        self.pairings
            .iter()
            .find(|p| p.source == face)
            .ok_or(Error::NoPairing(face))
    }

    pub fn generators(&self) -> Vec<Isometry> {
        self.pairings.iter().map(|p| p.isometry).collect()
    }

    /// Distinct group elements that are products of at most `max_len` face
    /// pairings, shortest first. The identity comes first.
    pub fn words(&self, max_len: usize) -> Result<Vec<Isometry>> {
        let gens = self.generators();
        let mut all = vec![Isometry::identity(self.kind())];
        let mut frontier = 0..1;
        for _ in 0..max_len {
            let mut added = Vec::new();
            for w in &all[frontier.clone()] {
                for g in &gens {
                    let c = g.compose(w)?;
                    if !all.iter().chain(&added).any(|e| e.distance(&c) < 1e-9) {
                        added.push(c);
                    }
                }
            }
            frontier = all.len()..all.len() + added.len();
            all.extend(added);
        }
        Ok(all)
    }

    /// Vertex index of the domain closest to `p`, if within `tol`.
    fn vertex_at(&self, p: &Vec4, tol: f64) -> Option<usize> {
        self.domain
            .vertices
            .iter()
            .position(|v| v.max_abs_diff(p) <= tol)
    }

    /// Counts cells of the identified complex by brute-force orbits of
    /// vertices and edges under the pairings.
    pub fn derive_complex(&self) -> Result<GluingComplex> {
        let nv = self.domain.vertices.len();
        let edges = self.domain.edges();
        let mut vclass = Classes::new(nv);
        let mut eclass = Classes::new(edges.len());
        let edge_index = |a: usize, b: usize| {
            edges
                .iter()
                .position(|&(x, y, _)| (x, y) == (a.min(b), a.max(b)))
        };
        for p in &self.pairings {
            let face = &self.domain.faces[p.source];
            let image = |v: usize| -> Result<usize> {
                let q = p.isometry.apply_point(&self.domain.vertices[v]);
                self.vertex_at(&q, 1e-7).ok_or_else(|| {
                    Error::InvalidGluing(format!("pairing {} -> {} does not map vertices to vertices", p.source, p.target))
                })
            };
            for &v in &face.vertices {
                vclass.union(v, image(v)?);
            }
            for (e, &(a, b, _)) in edges.iter().enumerate() {
                if face.vertices.contains(&a) && face.vertices.contains(&b) {
                    let (ia, ib) = (image(a)?, image(b)?);
                    let f = edge_index(ia, ib).ok_or_else(|| {
                        Error::InvalidGluing(format!("pairing {} -> {} does not map edges to edges", p.source, p.target))
                    })?;
                    eclass.union(e, f);
                }
            }
        }
        let edge_cycles = eclass.sizes();
        Ok(GluingComplex {
            vertices: vclass.sizes().len(),
            edges: edge_cycles.len(),
            faces: self.domain.faces.len() / 2,
            cells: 1,
            edge_cycles,
            derived: true,
        })
    }

    /// `g_face ∘ g_partner`, the identity for consistent gluing data.
    pub fn holonomy_roundtrip(&self, face: usize) -> Result<Isometry> {
        let p = self.pairing_for(face)?;
        let back = self.pairing_for(p.target)?;
        p.isometry.compose(&back.isometry)
    }

    pub fn validate(&self) -> GluingReport {
        let mut unpaired = Vec::new();
        let mut roundtrip = 0.0f64;
        for f in 0..self.domain.faces.len() {
            let count = self.pairings.iter().filter(|p| p.source == f).count();
            if count != 1 {
                unpaired.push(f);
                continue;
            }
            match self.holonomy_roundtrip(f) {
                Ok(g) => {
                    let id = Isometry::identity(self.kind());
                    roundtrip = roundtrip.max(g.distance(&id));
                }
                Err(_) => roundtrip = f64::INFINITY,
            }
        }
        let mut face_map = 0.0f64;
        for p in &self.pairings {
            for &v in &self.domain.faces[p.source].vertices {
                let q = p.isometry.apply_point(&self.domain.vertices[v]);
                face_map = face_map.max(self.domain.face_value(p.target, &q).abs());
                if self.complex.derived {
                    let near = self
                        .domain
                        .faces[p.target]
                        .vertices
                        .iter()
                        .map(|&w| self.domain.vertices[w].max_abs_diff(&q))
                        .fold(f64::INFINITY, f64::min);
                    face_map = face_map.max(near);
                }
            }
        }
        let (dihedral_range, edge_angle_residual) = if self.complex.derived {
            self.edge_angles()
        } else {
            (None, None)
        };
        GluingReport {
            complex: self.complex.clone(),
            euler: euler_characteristic(&self.complex),
            dihedral_range,
            edge_angle_residual,
            roundtrip_residual: roundtrip,
            face_map_residual: face_map,
            unpaired_faces: unpaired,
        }
    }

    fn edge_angles(&self) -> (Option<(f64, f64)>, Option<f64>) {
        let edges = self.domain.edges();
        if edges.is_empty() {
            return (None, None);
        }
        let angles: Vec<f64> = edges
            .iter()
            .map(|&(_, _, [a, b])| self.domain.dihedral_angle(a, b))
            .collect();
        let lo = angles.iter().cloned().fold(f64::INFINITY, f64::min).to_degrees();
        let hi = angles.iter().cloned().fold(f64::NEG_INFINITY, f64::max).to_degrees();
        // regroup the edge classes to sum angles per class
        let mut classes = Classes::new(edges.len());
        for p in &self.pairings {
            let face = &self.domain.faces[p.source];
            for (e, &(a, b, _)) in edges.iter().enumerate() {
                if face.vertices.contains(&a) && face.vertices.contains(&b) {
                    let ia = self.vertex_at(&p.isometry.apply_point(&self.domain.vertices[a]), 1e-7);
                    let ib = self.vertex_at(&p.isometry.apply_point(&self.domain.vertices[b]), 1e-7);
                    if let (Some(ia), Some(ib)) = (ia, ib) {
                        if let Some(f) = edges.iter().position(|&(x, y, _)| (x, y) == (ia.min(ib), ia.max(ib))) {
                            classes.union(e, f);
                        }
                    }
                }
            }
        }
        let mut sums = vec![0.0; edges.len()];
        for (e, angle) in angles.iter().enumerate() {
            let r = classes.find(e);
            sums[r] += angle;
        }
        let residual = (0..edges.len())
            .filter(|&e| classes.find(e) == e)
            .map(|e| (sums[e] - 2.0 * PI).abs())
            .fold(0.0, f64::max);
        (Some((lo, hi)), Some(residual))
    }

    /// Applies pairings until the position is inside the domain.
    pub fn reduce(&self, s: &GeodesicState) -> Result<(GeodesicState, Isometry)> {
        let mut state = *s;
        let mut total = Isometry::identity(self.kind());
        for _ in 0..MAX_REDUCTIONS {
            match self.domain.max_face(&state.position) {
                Some((face, v)) if v > OUTSIDE_TOL => {
                    let g = self.pairing_for(face)?.isometry;
                    state = self.geometry.reproject(&g.apply_state(&state))?;
                    total = g.compose(&total)?;
                }
                _ => return Ok((state, total)),
            }
        }
        Err(Error::NumericFailure("boundary reduction did not terminate"))
    }

    /// Moves a state sitting on the boundary (and heading out) into the
    /// domain through the paired face. Returns the new state, already pushed
    /// `CROSSING_EPSILON` inside, and the isometry applied.
    pub fn cross_boundary(&self, s: &GeodesicState) -> Result<(GeodesicState, Isometry)> {
        let (face, _) = self.domain.max_face(&s.position).ok_or(Error::NoPairing(0))?;
        let g = self.pairing_for(face)?.isometry;
        let mut state = self.geometry.reproject(&g.apply_state(s))?;
        let mut total = g;
        for _ in 0..MAX_REDUCTIONS {
            let (reduced, h) = self.reduce(&state)?;
            total = h.compose(&total)?;
            state = self.geometry.geodesic(&reduced, CROSSING_EPSILON)?;
            if self.domain.contains(&state.position, OUTSIDE_TOL) {
                return Ok((state, total));
            }
        }
        Err(Error::NumericFailure("crossing did not land inside the domain"))
    }
}

// ------------------------------------------------------------------ builtins

pub const BUILTIN_NAMES: [&str; 7] = [
    "flat-torus",
    "flat-half-turn",
    "flat-quarter-turn",
    "seifert-weber",
    "poincare-sphere",
    "nil-cube",
    "sol-golden",
];

pub fn builtin_manifold(name: &str) -> Result<QuotientManifold> {
    match name {
        "flat-torus" => flat_cube(name, Isometry::translation(Vec3::new(0.0, 0.0, 1.0))),
        "flat-half-turn" => flat_cube(
            name,
            Isometry::Affine(Matrix([
                [-1.0, 0.0, 0.0, 1.0],
                [0.0, -1.0, 0.0, 1.0],
                [0.0, 0.0, 1.0, 1.0],
                [0.0, 0.0, 0.0, 1.0],
            ])),
        ),
        "flat-quarter-turn" => flat_cube(
            name,
            Isometry::Affine(Matrix([
                [0.0, -1.0, 0.0, 1.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 1.0],
                [0.0, 0.0, 0.0, 1.0],
            ])),
        ),
        "seifert-weber" => dodecahedral(name, GeometryKind::H3, 72.0, 3.0 * PI / 5.0),
        "poincare-sphere" => dodecahedral(name, GeometryKind::S3, 120.0, PI / 5.0),
        "nil-cube" => group_box(
            name,
            GeometryKind::Nil,
            1.0,
            [
                Isometry::Nil(Vec3::new(1.0, 0.0, 0.0)),
                Isometry::Nil(Vec3::new(0.0, 1.0, 0.0)),
                Isometry::Nil(Vec3::new(0.0, 0.0, 1.0)),
            ],
        ),
        "sol-golden" => {
            // the xy lattice {(a + b phi', a + b phi)} with phi' = -1/phi is carried
            // onto itself by the (phi^-2, phi^2) scaling of the vertical generator
            let phi = golden_ratio();
            let h = 2.0 * phi.ln();
            let (a, b) = ([1.0, 1.0], [-1.0 / phi, phi]);
            QuotientManifold::from_parts(
                name,
                Geometry::new(GeometryKind::Sol),
                prism_domain(GeometryKind::Sol, a, b, h),
                box_pairings([
                    Isometry::Sol(Vec3::new(a[0], a[1], 0.0)),
                    Isometry::Sol(Vec3::new(b[0], b[1], 0.0)),
                    Isometry::Sol(Vec3::new(0.0, 0.0, h)),
                ])?,
                Some(box_complex()),
            )
        }
        _ => Err(Error::UnknownManifold {
            name: name.to_string(),
            field: "manifold.builtin".into(),
        }),
    }
}

pub fn golden_ratio() -> f64 {
    (1.0 + 5f64.sqrt()) / 2.0
}

/// Box `[0,1]² × [0,height]` with faces ordered `x=0, x=1, y=0, y=1, z=0, z=top`.
fn box_domain(kind: GeometryKind, height: f64) -> FundamentalDomain {
    prism_domain(kind, [1.0, 0.0], [0.0, 1.0], height)
}

/// Prism over the parallelogram spanned by `a` and `b` in the xy plane, for
/// `z` in `[0, height]`. Faces come in pairs `(lower, upper)` along `a`, `b`
/// and `z`, with functionals scaled to unit normals.
fn prism_domain(kind: GeometryKind, a: [f64; 2], b: [f64; 2], height: f64) -> FundamentalDomain {
    let vertices = (0..8)
        .map(|i| {
            let c = |bit: usize| if i & bit != 0 { 1.0 } else { 0.0 };
            let (ca, cb) = (c(1), c(2));
            Vector([ca * a[0] + cb * b[0], ca * a[1] + cb * b[1], c(4) * height, 0.0])
        })
        .collect();
    // rows of the inverse of [a b] give the lattice coordinates
    let det = a[0] * b[1] - a[1] * b[0];
    let rows = [
        Vector([b[1] / det, -b[0] / det, 0.0, 0.0]),
        Vector([-a[1] / det, a[0] / det, 0.0, 0.0]),
        Vector([0.0, 0.0, 1.0 / height, 0.0]),
    ];
    let mut faces = Vec::new();
    for (axis, row) in rows.iter().enumerate() {
        let norm = row.xyz().norm();
        for upper in [false, true] {
            let mut f = *row / norm;
            if upper {
                f[3] = -1.0 / norm;
            } else {
                f = -f;
            }
            let bit = 1 << axis;
            faces.push(Face {
                id: faces.len(),
                functional: f,
                vertices: (0..8).filter(|i| (i & bit != 0) == upper).collect(),
            });
        }
    }
    FundamentalDomain {
        geometry: kind,
        faces,
        vertices,
    }
}

/// Pairings for a box from three generators `g_axis` mapping face `axis=0`
/// onto the opposite face.
fn box_pairings(gens: [Isometry; 3]) -> Result<Vec<FacePairing>> {
    let mut out = Vec::new();
    for (axis, g) in gens.iter().enumerate() {
        let (lo, hi) = (2 * axis, 2 * axis + 1);
        out.push(FacePairing {
            source: lo,
            target: hi,
            isometry: *g,
        });
        out.push(FacePairing {
            source: hi,
            target: lo,
            isometry: g.inverse()?,
        });
    }
    Ok(out)
}

fn flat_cube(name: &str, vertical: Isometry) -> Result<QuotientManifold> {
    let gens = [
        Isometry::translation(Vec3::new(1.0, 0.0, 0.0)),
        Isometry::translation(Vec3::new(0.0, 1.0, 0.0)),
        vertical,
    ];
    QuotientManifold::from_parts(
        name,
        Geometry::new(GeometryKind::E3),
        box_domain(GeometryKind::E3, 1.0),
        box_pairings(gens)?,
        None,
    )
}

/// Nil cube from its three generators.
fn group_box(name: &str, kind: GeometryKind, height: f64, gens: [Isometry; 3]) -> Result<QuotientManifold> {
    QuotientManifold::from_parts(
        name,
        Geometry::new(kind),
        box_domain(kind, height),
        box_pairings(gens)?,
        Some(box_complex()),
    )
}

/// Nil and Sol generators do not carry the box's faces onto each other
/// cell-for-cell, so the complex is the one of a box with opposite faces
/// identified, declared rather than derived.
fn box_complex() -> GluingComplex {
    GluingComplex {
        vertices: 1,
        edges: 3,
        faces: 3,
        cells: 1,
        edge_cycles: vec![4, 4, 4],
        derived: false,
    }
}

// ------------------------------------------------------------- dodecahedra

/// Regular dodecahedron: unit face normals and vertices (scaled to inradius 1).
fn euclidean_dodecahedron() -> (Vec<Vec3>, Vec<Vec3>) {
    let phi = golden_ratio();
    let ip = 1.0 / phi;
    let mut verts = Vec::new();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                verts.push(Vec3::new(sx, sy, sz));
            }
        }
    }
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            verts.push(Vec3::new(0.0, s1 * ip, s2 * phi));
            verts.push(Vec3::new(s1 * ip, s2 * phi, 0.0));
            verts.push(Vec3::new(s1 * phi, 0.0, s2 * ip));
        }
    }
    let mut normals = Vec::new();
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            for n in [
                Vec3::new(0.0, s1 * phi, s2),
                Vec3::new(s1 * phi, s2, 0.0),
                Vec3::new(s2, 0.0, s1 * phi),
            ] {
                normals.push(n / n.norm());
            }
        }
    }
    let inradius = verts.iter().map(|v| v.dot(&normals[0])).fold(f64::MIN, f64::max);
    let verts = verts.into_iter().map(|v| v / inradius).collect();
    (normals, verts)
}

/// Face functional in homogeneous coordinates for the plane `n·x = r` of the
/// Klein (H3) or gnomonic (S3) chart, scaled so it equals the sine/sinh of
/// the signed distance to the face.
fn face_functional(kind: GeometryKind, n: &Vec3, r: f64) -> Vec4 {
    let scale = match kind {
        GeometryKind::H3 => (1.0 - r * r).sqrt(),
        _ => (1.0 + r * r).sqrt(),
    };
    n.extend(-r) / scale
}

fn dodecahedron_domain(kind: GeometryKind, r: f64) -> FundamentalDomain {
    let (normals, unit_verts) = euclidean_dodecahedron();
    let geom = Geometry::new(kind);
    let vertices: Vec<Vec4> = unit_verts
        .iter()
        .map(|v| geom.from_local(&(*v * r)).expect("dodecahedron vertex inside the model"))
        .collect();
    let faces = normals
        .iter()
        .enumerate()
        .map(|(id, n)| {
            let verts = unit_verts
                .iter()
                .enumerate()
                .filter(|(_, v)| (v.dot(n) - 1.0).abs() < 1e-9)
                .map(|(i, _)| i)
                .collect();
            Face {
                id,
                functional: face_functional(kind, n, r),
                vertices: verts,
            }
        })
        .collect();
    FundamentalDomain {
        geometry: kind,
        faces,
        vertices,
    }
}

/// Dihedral angle (degrees) of the regular dodecahedron whose faces lie at
/// chart distance `r`.
fn dodecahedron_dihedral(kind: GeometryKind, r: f64) -> f64 {
    let d = dodecahedron_domain(kind, r);
    let adjacent = (1..12)
        .find(|&j| d.faces[j].vertices.iter().filter(|v| d.faces[0].vertices.contains(v)).count() == 2)
        .expect("dodecahedron faces have neighbours");
    d.dihedral_angle(0, adjacent).to_degrees()
}

/// Chart inradius giving the requested dihedral angle, by bisection.
pub fn dodecahedron_scale(kind: GeometryKind, target_degrees: f64) -> f64 {
    // H3 angles shrink with size, S3 angles grow
    let (mut lo, mut hi) = match kind {
        GeometryKind::H3 => (0.0, 0.79),
        _ => (0.0, 2.0),
    };
    let increasing = kind != GeometryKind::H3;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let above = dodecahedron_dihedral(kind, mid) > target_degrees;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn rotation_about(n: &Vec3, angle: f64) -> Mat4 {
    let (s, c) = angle.sin_cos();
    let mut m = Mat4::identity();
    for i in 0..3 {
        for j in 0..3 {
            let k = (0..3).find(|&k| k != i && k != j);
            let cross = match (i, j, k) {
                (i, j, Some(k)) if i != j => {
                    // [n]_x entry: -ε_ijk n_k
                    let eps = if (i + 1) % 3 == j { 1.0 } else { -1.0 };
                    -eps * n[k]
                }
                _ => 0.0,
            };
            let delta = if i == j { 1.0 } else { 0.0 };
            m.0[i][j] = c * delta + s * cross + (1.0 - c) * n[i] * n[j];
        }
    }
    m
}

fn reflection(kind: GeometryKind, functional: &Vec4) -> Mat4 {
    // m is the ambient normal: f(p) = <m, p> in the model's form
    let (m, sign) = match kind {
        GeometryKind::H3 => (Vector([functional[0], functional[1], functional[2], -functional[3]]), -1.0),
        _ => (*functional, 1.0),
    };
    let norm2 = match kind {
        GeometryKind::H3 => lorentz_dot(&m, &m),
        _ => m.dot(&m),
    };
    let mut out = Mat4::identity();
    for i in 0..4 {
        for j in 0..4 {
            // x - 2 <x, m> m / <m, m>; the form's row j contributes sign on w
            let gj = if j == 3 { sign } else { 1.0 };
            out.0[i][j] -= 2.0 * m[i] * m[j] * gj / norm2;
        }
    }
    out
}

/// Angle about `axis` from `a` to `b` after projecting both onto the
/// plane orthogonal to `axis`.
fn twist_angle(axis: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let pa = *a - *axis * axis.dot(a);
    let pb = *b - *axis * axis.dot(b);
    axis.dot(&pa.cross(&pb)).atan2(pa.dot(&pb))
}

fn dodecahedral(name: &str, kind: GeometryKind, dihedral: f64, twist: f64) -> Result<QuotientManifold> {
    let r = dodecahedron_scale(kind, dihedral);
    let domain = dodecahedron_domain(kind, r);
    let geom = Geometry::new(kind);
    let (normals, _) = euclidean_dodecahedron();
    let antipode = Mat4::from_diagonal([-1.0, -1.0, -1.0, 1.0]);
    let mut pairings = Vec::new();
    for (i, n) in normals.iter().enumerate() {
        // one source per antipodal pair
        let first = [n[0], n[1], n[2]].into_iter().find(|c| c.abs() > 1e-12).unwrap_or(0.0);
        if first < 0.0 {
            continue;
        }
        let j = normals
            .iter()
            .position(|m| m.max_abs_diff(&(-*n)) < 1e-12)
            .ok_or_else(|| Error::InvalidGluing("dodecahedron face without opposite".into()))?;
        let sigma = reflection(kind, &domain.faces[j].functional);
        let v0 = domain.vertices[domain.faces[i].vertices[0]];
        let local0 = geom.local_coords(&v0)?;
        let mut chosen = None;
        for k in 0..5 {
            let rot = rotation_about(n, 2.0 * PI * k as f64 / 5.0);
            let g = sigma.mul_mat(&antipode).mul_mat(&rot);
            let image = geom.local_coords(&g.mul_vec(&v0))?;
            let angle = twist_angle(n, &local0, &image);
            let diff = (angle - twist + PI).rem_euclid(2.0 * PI) - PI;
            if diff.abs() < 1e-6 {
                chosen = Some(g);
                break;
            }
        }
        let g = chosen.ok_or_else(|| Error::InvalidGluing(format!("no face rotation realises a twist of {twist}")))?;
        let g = Isometry::Linear(g);
        pairings.push(FacePairing {
            source: i,
            target: j,
            isometry: g,
        });
        pairings.push(FacePairing {
            source: j,
            target: i,
            isometry: g.inverse()?,
        });
    }
    QuotientManifold::from_parts(name, geom, domain, pairings, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(p: [f64; 3], v: [f64; 3]) -> GeodesicState {
        GeodesicState::new(Vec3::new(p[0], p[1], p[2]).extend(0.0), Vec3::new(v[0], v[1], v[2]).extend(0.0))
    }

    #[test]
    fn torus_words_are_l1_balls() {
        let m = builtin_manifold("flat-torus").unwrap();
        // |m|_1 <= k has 1, 7, 25 lattice points for k = 0, 1, 2
        for (k, n) in [(0, 1), (1, 7), (2, 25)] {
            assert_eq!(m.words(k).unwrap().len(), n);
        }
    }

    #[test]
    fn torus_crossing_wraps_to_the_opposite_face() {
        let m = builtin_manifold("flat-torus").unwrap();
        let (s, g) = m.cross_boundary(&state([1.0, 0.5, 0.5], [1.0, 0.0, 0.0])).unwrap();
        assert!(s.position.max_abs_diff(&Vector([CROSSING_EPSILON, 0.5, 0.5, 0.0])) < 1e-12);
        assert_eq!(s.velocity, Vector([1.0, 0.0, 0.0, 0.0]));
        assert!(g.distance(&Isometry::translation(Vec3::new(-1.0, 0.0, 0.0))) < 1e-15);
    }

    #[test]
    fn nil_phi1_example() {
        let phi1 = Isometry::Nil(Vec3::new(1.0, 0.0, 0.0));
        let q = phi1.apply_point(&Vector([0.0, 2.0, 3.0, 0.0]));
        assert_eq!(q, Vector([1.0, 2.0, 5.0, 0.0]));
    }

    #[test]
    fn sol_phi3_example() {
        let m = builtin_manifold("sol-golden").unwrap();
        let phi3 = m.pairing_for(4).unwrap().isometry;
        let q = phi3.apply_point(&Vector([1.0, 1.0, 0.0, 0.0]));
        let phi = golden_ratio();
        assert!(q.max_abs_diff(&Vector([phi.powi(-2), phi * phi, 2.0 * phi.ln(), 0.0])) < 1e-12);
        assert!(q.max_abs_diff(&Vector([0.381966, 2.618034, 0.962424, 0.0])) < 1e-6);
    }

    #[test]
    fn sol_vertical_generator_normalizes_the_lattice() {
        let m = builtin_manifold("sol-golden").unwrap();
        let [p1, p2, p3] = [0, 2, 4].map(|f| m.pairing_for(f).unwrap().isometry);
        let conj = |g: &Isometry| p3.compose(g).unwrap().compose(&p3.inverse().unwrap()).unwrap();
        let c = |a: Isometry, b: Isometry| a.compose(&b).unwrap();
        assert!(conj(&p1).distance(&c(p1, p2)) < 1e-12);
        assert!(conj(&p2).distance(&c(p1, c(p2, p2))) < 1e-12);
    }

    #[test]
    fn nil_crossing_reduces_sheared_points() {
        let m = builtin_manifold("nil-cube").unwrap();
        let g = Geometry::new(GeometryKind::Nil);
        let v = g.normalize(&Vector([1.0, 0.8, 0.3, 0.0]), &Vector([1.0, 0.1, 0.0, 0.0])).unwrap();
        let (s, _) = m.cross_boundary(&GeodesicState::new(Vector([1.0, 0.8, 0.3, 0.0]), v)).unwrap();
        assert!(m.domain.contains(&s.position, 0.0), "{:?}", s.position);
        assert!((g.norm_squared(&s.position, &s.velocity).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn missing_pairing_is_reported() {
        let mut m = builtin_manifold("flat-torus").unwrap();
        m.pairings.retain(|p| p.source != 1);
        assert_eq!(m.holonomy_roundtrip(1).unwrap_err(), Error::NoPairing(1));
        let r = m.validate();
        assert_eq!(r.unpaired_faces, vec![1]);
        assert!(!r.ok());
    }

    #[test]
    fn torus_complex_counts() {
        let c = builtin_manifold("flat-torus").unwrap().complex;
        assert_eq!((c.vertices, c.edges, c.faces, c.cells), (1, 3, 3, 1));
        assert_eq!(euler_characteristic(&c), 0);
    }

    #[test]
    fn orbit_examples() {
        assert_eq!(orbit_size(&[Isometry::identity(GeometryKind::S3)], 10).unwrap(), 1);
        let torus = builtin_manifold("flat-torus").unwrap();
        assert_eq!(orbit_size(&torus.generators(), 1000), Err(Error::Overflow(1000)));
    }

    #[test]
    fn dodecahedra_pairings_round_trip() {
        for name in ["poincare-sphere", "seifert-weber"] {
            let m = builtin_manifold(name).unwrap();
            for f in 0..12 {
                assert!(m.holonomy_roundtrip(f).unwrap().is_identity(1e-9), "{name} face {f}");
            }
        }
    }

    #[test]
    fn every_builtin_validates() {
        for name in BUILTIN_NAMES {
            let m = builtin_manifold(name).unwrap();
            let r = m.validate();
            assert!(r.ok(), "{name}: {r:?}");
        }
    }

    #[test]
    fn unknown_builtin_names_the_field() {
        match builtin_manifold("klein-bottle") {
            Err(Error::UnknownManifold { field, .. }) => assert_eq!(field, "manifold.builtin"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quarter_turn_complex() {
        let c = builtin_manifold("flat-quarter-turn").unwrap().complex;
        assert_eq!(euler_characteristic(&c), 0);
        assert_eq!(c.edge_cycles.iter().sum::<usize>(), 12);
    }

    #[test]
    fn dodecahedral_edge_classes_and_angles() {
        for (name, angle, classes, size) in [("seifert-weber", 72.0, 6, 5), ("poincare-sphere", 120.0, 10, 3)] {
            let m = builtin_manifold(name).unwrap();
            let r = m.validate();
            assert_eq!(r.complex.edges, classes, "{name}");
            assert!(r.complex.edge_cycles.iter().all(|&c| c == size), "{name}: {:?}", r.complex.edge_cycles);
            let (lo, hi) = r.dihedral_range.unwrap();
            assert!((lo - angle).abs() < 0.01 && (hi - angle).abs() < 0.01, "{name}: {lo} {hi}");
            assert_eq!(r.euler, 0);
        }
    }

    #[test]
    fn poincare_group_has_order_120() {
        let m = builtin_manifold("poincare-sphere").unwrap();
        assert_eq!(orbit_size(&m.generators(), 500).unwrap(), 120);
    }
}
