//! TOML scene configuration: manifold, primitives, camera and render settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryKind;
use crate::quotient::{
    builtin_manifold, Face, FacePairing, FundamentalDomain, GluingComplex, Isometry, QuotientManifold,
};
use crate::render::{build_camera, default_ray_length, Camera, RenderSettings};
use crate::scene::{Material, Primitive, Scene, DEFAULT_MARCH_STEP};
use crate::tensor::{Matrix, Vector};
use crate::{Geometry, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub manifold: ManifoldSpec,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub render: RenderSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scene: Vec<PrimitiveSpec>,
}

/// Either `builtin = "<name>"`, or `geometry = "<id>"` with optional inline
/// gluing data. A geometry without faces is the bare model space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Domain vertices: local `(x, y, z)` in chart geometries, model
    /// coordinates `(x, y, z, w)` in S3 and H3.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vertices: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faces: Vec<FaceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairings: Vec<PairingSpec>,
    /// Declared cell counts; derived from the pairings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complex: Option<ComplexSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceSpec {
    /// Negative inside, evaluated on `(x, y, z, 1)` or the model point.
    pub functional: [f64; 4],
    #[serde(default)]
    pub vertices: Vec<usize>,
}

/// A face pairing given by exactly one of a 4×4 matrix (affine for E3,
/// linear for S3/H3) or a named group element (`nil`, `sol`) acting by left
/// multiplication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingSpec {
    pub source: usize,
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[f64; 4]; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nil: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sol: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexSpec {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub cells: usize,
    #[serde(default)]
    pub edge_cycles: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveSpecKind {
    Ball,
    Tube,
    Light,
    /// Tubes along every edge of the fundamental domain.
    Edges,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveSpecKind,
    /// Ball centre in local coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    pub radius: f64,
    /// Tube endpoints in local coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub albedo: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub inverted: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Camera pose in local coordinates (see [`Geometry::from_local`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub forward: [f64; 3],
    pub up: [f64; 3],
    pub focal: f64,
    /// `[a, b, c, d]`: vertical extent `[a, b]`, horizontal extent `[c, d]`.
    pub rect: [f64; 4],
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            position: [0.0; 3],
            forward: [1.0, 0.0, 0.0],
            up: [0.0, 0.0, 1.0],
            focal: 1.0,
            rect: [-0.5, 0.5, -0.5, 0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSpec {
    pub width: usize,
    pub height: usize,
    pub spp: u32,
    pub seed: u64,
    pub indirect: bool,
    pub hemisphere_samples: u32,
    pub ambient: f64,
    pub max_crossings: u32,
    pub shadow_crossings: u32,
    pub light_images: usize,
    /// Per-geometry default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    pub march_step: f64,
    pub tile_rows: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        let d = RenderSettings::for_geometry(GeometryKind::E3);
        RenderSpec {
            width: 128,
            height: 128,
            spp: d.spp,
            seed: d.seed,
            indirect: d.indirect,
            hemisphere_samples: d.hemisphere_samples,
            ambient: d.ambient,
            max_crossings: d.max_crossings,
            shadow_crossings: d.shadow_crossings,
            light_images: d.light_images,
            t_max: None,
            march_step: DEFAULT_MARCH_STEP,
            tile_rows: d.tile_rows,
        }
    }
}

impl RenderSpec {
    pub fn settings(&self, kind: GeometryKind) -> RenderSettings {
        RenderSettings {
            spp: self.spp,
            indirect: self.indirect,
            hemisphere_samples: self.hemisphere_samples,
            ambient: self.ambient,
            seed: self.seed,
            tile_rows: self.tile_rows,
            t_max: self.t_max.unwrap_or_else(|| default_ray_length(kind)),
            max_crossings: self.max_crossings,
            shadow_crossings: self.shadow_crossings,
            light_images: self.light_images,
            march_step: self.march_step,
        }
    }
}

/// Everything needed to render, built from a [`Config`].
#[derive(Clone, Debug)]
pub struct Setup {
    pub manifold: QuotientManifold,
    pub scene: Scene,
    pub camera: Camera,
    pub settings: RenderSettings,
}

/// Parses and fully validates a configuration.
pub fn parse_config(text: &str) -> Result<Config> {
    let config = Config::from_toml(text)?;
    config.validate()?;
    Ok(config)
}

impl Config {
    /// The documented defaults: a ball and a light in the flat torus.
    pub fn defaults() -> Self {
        Config {
            output: Some("out.ppm".into()),
            manifold: ManifoldSpec {
                builtin: Some("flat-torus".into()),
                ..Default::default()
            },
            camera: CameraSpec {
                position: [0.15, 0.5, 0.5],
                ..Default::default()
            },
            render: RenderSpec::default(),
            scene: vec![
                PrimitiveSpec {
                    kind: PrimitiveSpecKind::Ball,
                    center: Some([0.5, 0.5, 0.5]),
                    radius: 0.2,
                    a: None,
                    b: None,
                    albedo: Some([0.8, 0.3, 0.2]),
                    emission: None,
                    inverted: false,
                },
                PrimitiveSpec {
                    kind: PrimitiveSpecKind::Light,
                    center: Some([0.5, 0.8, 0.85]),
                    radius: 0.05,
                    a: None,
                    b: None,
                    albedo: None,
                    emission: Some([4.0, 4.0, 4.0]),
                    inverted: false,
                },
            ],
        }
    }

    /// Syntax and type checks only; see [`parse_config`] for full validation.
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Schema checks plus a trial build; all problems are reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let r = &self.render;
        if r.width == 0 || r.height == 0 {
            errors.push(Error::schema("render.width", "resolution must be at least 1x1"));
        }
        if r.spp == 0 {
            errors.push(Error::schema("render.spp", "spp >= 1 is required"));
        }
        if r.indirect && r.hemisphere_samples == 0 {
            errors.push(Error::schema("render.hemisphere_samples", "at least one sample is required"));
        }
        if !(0.0..=1.0).contains(&r.ambient) {
            errors.push(Error::schema("render.ambient", "ambient must lie in [0, 1]"));
        }
        if !(r.march_step > 0.0) {
            errors.push(Error::schema("render.march_step", "march_step > 0 is required"));
        }
        if r.t_max.is_some_and(|t| !(t > 0.0)) {
            errors.push(Error::schema("render.t_max", "t_max > 0 is required"));
        }
        for (i, p) in self.scene.iter().enumerate() {
            if !(p.radius > 0.0 && p.radius.is_finite()) {
                errors.push(Error::schema(format!("scene[{i}].radius"), "radius > 0 is required"));
            }
            if p.albedo.is_some_and(|a| a.iter().any(|c| !(0.0..=1.0).contains(c))) {
                errors.push(Error::schema(format!("scene[{i}].albedo"), "albedo must lie in [0, 1]"));
            }
            if p.emission.is_some_and(|e| e.iter().any(|c| !(*c >= 0.0))) {
                errors.push(Error::schema(format!("scene[{i}].emission"), "emission must be >= 0"));
            }
        }
        if errors.is_empty() {
            if let Err(e) = self.build() {
                errors.push(e);
            }
        }
        match errors.len() {
            0 => Ok(()),
            1 => Err(errors.remove(0)),
            _ => Err(Error::Invalid(errors)),
        }
    }

    pub fn build(&self) -> Result<Setup> {
        let manifold = self.manifold.build()?;
        let geom = manifold.geometry;
        let scene = self.build_scene(&manifold)?;
        let c = &self.camera;
        let p = geom
            .from_local(&Vec3::from(c.position))
            .map_err(|e| Error::schema("camera.position", e.to_string()))?;
        let n = geom.tangent_from_local(&p, &Vec3::from(c.forward));
        let u = geom.tangent_from_local(&p, &Vec3::from(c.up));
        let camera = build_camera(&geom, p, n, u, c.focal, c.rect, (self.render.height, self.render.width))
            .map_err(|e| match e {
                Error::DegenerateFrame => Error::schema("camera.up", "forward and up must be independent"),
                e => e,
            })?;
        Ok(Setup {
            manifold,
            scene,
            camera,
            settings: self.render.settings(geom.kind()),
        })
    }

    fn build_scene(&self, manifold: &QuotientManifold) -> Result<Scene> {
        let geom = &manifold.geometry;
        let mut prims = Vec::with_capacity(self.scene.len());
        for (i, s) in self.scene.iter().enumerate() {
            let field = |f: &str| format!("scene[{i}].{f}");
            let albedo = s.albedo.unwrap_or(match s.kind {
                PrimitiveSpecKind::Light => [0.0; 3],
                _ => [0.8; 3],
            });
            let emission = s.emission.unwrap_or(match s.kind {
                PrimitiveSpecKind::Light => [1.0; 3],
                _ => [0.0; 3],
            });
            let material = Material { albedo, emission };
            let prim = match s.kind {
                PrimitiveSpecKind::Ball | PrimitiveSpecKind::Light => {
                    let c = s.center.ok_or_else(|| Error::schema(field("center"), "balls need a center"))?;
                    let prim = Primitive::ball(geom, Vec3::from(c), s.radius, material)
                        .map_err(|e| retarget(e, &field("radius")))?;
                    if !s.inverted
                        && !manifold.is_bare()
                        && !manifold.domain.contains(&prim.center().expect("ball"), 1e-9)
                    {
                        return Err(Error::schema(field("center"), "center lies outside the fundamental domain"));
                    }
                    prim
                }
                PrimitiveSpecKind::Tube => {
                    let (Some(a), Some(b)) = (s.a, s.b) else {
                        return Err(Error::schema(field("a"), "tubes need endpoints a and b"));
                    };
                    Primitive::tube(Vec3::from(a), Vec3::from(b), s.radius, material)
                        .map_err(|e| retarget(e, &field("radius")))?
                }
                PrimitiveSpecKind::Edges => {
                    if manifold.is_bare() {
                        return Err(Error::schema(field("kind"), "edges need a fundamental domain"));
                    }
                    let verts = &manifold.domain.vertices;
                    for (a, b, _) in manifold.domain.edges() {
                        let a = geom.local_coords(&verts[a])?;
                        let b = geom.local_coords(&verts[b])?;
                        prims.push(
                            Primitive::tube(a, b, s.radius, material).map_err(|e| retarget(e, &field("radius")))?,
                        );
                    }
                    continue;
                }
            };
            if s.kind == PrimitiveSpecKind::Light && !prim.material.is_emitter() {
                return Err(Error::schema(field("emission"), "lights need a positive emission"));
            }
            prims.push(if s.inverted { prim.inverted() } else { prim });
        }
        Ok(Scene::new(prims))
    }
}

fn retarget(e: Error, field: &str) -> Error {
    match e {
        Error::Schema { message, .. } => Error::schema(field, message),
        e => e,
    }
}

impl ManifoldSpec {
    pub fn builtin(name: &str) -> Self {
        ManifoldSpec {
            builtin: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<QuotientManifold> {
        match (&self.builtin, &self.geometry) {
            (Some(_), Some(_)) => Err(Error::schema("manifold", "give either builtin or geometry, not both")),
            (None, None) => Err(Error::schema("manifold", "builtin or geometry is required")),
            (Some(name), None) => {
                if !self.faces.is_empty() || !self.pairings.is_empty() {
                    return Err(Error::schema("manifold.faces", "builtin manifolds take no gluing data"));
                }
                builtin_manifold(name)
            }
            (None, Some(g)) => self.build_inline(g),
        }
    }

    fn build_inline(&self, geometry: &str) -> Result<QuotientManifold> {
        let kind: GeometryKind = geometry.parse().map_err(|e| match e {
            Error::UnknownManifold { name, .. } => Error::UnknownManifold {
                name,
                field: "manifold.geometry".into(),
            },
            e => e,
        })?;
        let geom = Geometry::new(kind);
        if self.faces.is_empty() {
            if !self.pairings.is_empty() {
                return Err(Error::schema("manifold.pairings", "pairings need faces"));
            }
            return Ok(QuotientManifold::bare(geom));
        }
        let embedded = matches!(kind, GeometryKind::S3 | GeometryKind::H3);
        let mut vertices = Vec::with_capacity(self.vertices.len());
        for (i, v) in self.vertices.iter().enumerate() {
            let p = match (embedded, v.as_slice()) {
                (false, &[x, y, z]) => Vector([x, y, z, 0.0]),
                (true, &[x, y, z, w]) => Vector([x, y, z, w]),
                _ => {
                    let n = if embedded { 4 } else { 3 };
                    return Err(Error::schema(
                        format!("manifold.vertices[{i}]"),
                        format!("expected {n} coordinates"),
                    ));
                }
            };
            vertices.push(p);
        }
        let faces = self
            .faces
            .iter()
            .enumerate()
            .map(|(id, f)| {
                if let Some(&bad) = f.vertices.iter().find(|&&v| v >= vertices.len()) {
                    return Err(Error::schema(
                        format!("manifold.faces[{id}].vertices"),
                        format!("vertex {bad} does not exist"),
                    ));
                }
                Ok(Face {
                    id,
                    functional: Vector(f.functional),
                    vertices: f.vertices.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pairings = self
            .pairings
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let isometry = match (p.matrix, p.nil, p.sol, kind) {
                    (Some(m), None, None, GeometryKind::E3) => Isometry::Affine(Matrix(m)),
                    (Some(m), None, None, GeometryKind::S3 | GeometryKind::H3) => Isometry::Linear(Matrix(m)),
                    (None, Some(a), None, GeometryKind::Nil) => Isometry::Nil(Vector(a)),
                    (None, None, Some(a), GeometryKind::Sol) => Isometry::Sol(Vector(a)),
                    _ => {
                        return Err(Error::schema(
                            format!("manifold.pairings[{i}]"),
                            format!("{kind} pairings need exactly one of matrix (E3/S3/H3), nil or sol"),
                        ))
                    }
                };
                Ok(FacePairing {
                    source: p.source,
                    target: p.target,
                    isometry,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let declared = self.complex.as_ref().map(|c| GluingComplex {
            vertices: c.vertices,
            edges: c.edges,
            faces: c.faces,
            cells: c.cells,
            edge_cycles: c.edge_cycles.clone(),
            derived: false,
        });
        let domain = FundamentalDomain {
            geometry: kind,
            faces,
            vertices,
        };
        let name = self.name.clone().unwrap_or_else(|| format!("custom-{}", kind.name()));
        QuotientManifold::from_parts(name, geom, domain, pairings, declared)
    }

    /// Inline gluing data describing `m`.
    pub fn inline_from(m: &QuotientManifold) -> Self {
        let kind = m.kind();
        let embedded = matches!(kind, GeometryKind::S3 | GeometryKind::H3);
        ManifoldSpec {
            builtin: None,
            geometry: Some(kind.name().to_string()),
            name: Some(m.name.clone()),
            vertices: m
                .domain
                .vertices
                .iter()
                .map(|v| if embedded { v.0.to_vec() } else { v.xyz().0.to_vec() })
                .collect(),
            faces: m
                .domain
                .faces
                .iter()
                .map(|f| FaceSpec {
                    functional: f.functional.0,
                    vertices: f.vertices.clone(),
                })
                .collect(),
            pairings: m
                .pairings
                .iter()
                .map(|p| {
                    let mut spec = PairingSpec {
                        source: p.source,
                        target: p.target,
                        matrix: None,
                        nil: None,
                        sol: None,
                    };
                    match p.isometry {
                        Isometry::Affine(a) | Isometry::Linear(a) => spec.matrix = Some(a.0),
                        Isometry::Nil(a) => spec.nil = Some(a.0),
                        Isometry::Sol(a) => spec.sol = Some(a.0),
                    }
                    spec
                })
                .collect(),
            complex: (!m.complex.derived).then(|| ComplexSpec {
                vertices: m.complex.vertices,
                edges: m.complex.edges,
                faces: m.complex.faces,
                cells: m.complex.cells,
                edge_cycles: m.complex.edge_cycles.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[manifold]
builtin = "flat-torus"

[[scene]]
kind = "ball"
center = [0.5, 0.5, 0.5]
radius = 0.2
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.render, RenderSpec::default());
        assert_eq!(c.camera, CameraSpec::default());
        assert_eq!(c.scene[0].albedo, None);
        let setup = c.build().unwrap();
        assert_eq!(setup.scene.primitives[0].material.albedo, [0.8; 3]);
        assert_eq!(setup.camera.rows, 128);
    }

    #[test]
    fn unknown_geometry_names_the_field() {
        let err = parse_config("[manifold]\ngeometry = \"E4\"\n").unwrap_err();
        assert_eq!(
            err,
            Error::UnknownManifold {
                name: "E4".into(),
                field: "manifold.geometry".into()
            }
        );
        let err = parse_config("[manifold]\nbuiltin = \"klein-bottle\"\n").unwrap_err();
        assert!(matches!(err, Error::UnknownManifold { ref field, .. } if field == "manifold.builtin"));
    }

    #[test]
    fn negative_radius_is_a_schema_error() {
        let err = parse_config(&MINIMAL.replace("radius = 0.2", "radius = -0.2")).unwrap_err();
        assert!(matches!(err, Error::Schema { ref field, .. } if field == "scene[0].radius"));
        assert!(err.to_string().contains("radius > 0"));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = parse_config("[manifold]\nbuiltin = \n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(2), .. }), "{err:?}");
        let err = parse_config("[manifold]\nbuiltin = \"flat-torus\"\ncolour = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(3), .. }), "{err:?}");
    }

    #[test]
    fn several_problems_are_reported_together() {
        let text = MINIMAL.replace("radius = 0.2", "radius = 0.0") + "[render]\nspp = 0\n";
        match parse_config(&text).unwrap_err() {
            Error::Invalid(list) => assert_eq!(list.len(), 2),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn printed_defaults_round_trip() {
        let c = Config::defaults();
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn inline_gluing_matches_builtin() {
        for name in crate::quotient::BUILTIN_NAMES {
            let m = builtin_manifold(name).unwrap();
            let config = Config {
                manifold: ManifoldSpec::inline_from(&m),
                ..Config::defaults()
            };
            let mut config = config;
            config.scene.clear();
            let text = config.to_toml();
            let parsed = parse_config(&text).unwrap();
            let rebuilt = parsed.manifold.build().unwrap();
            assert_eq!(rebuilt.complex, m.complex, "{name}");
            assert!(rebuilt.validate().ok(), "{name}");
        }
    }

    #[test]
    fn edges_expand_to_one_tube_per_domain_edge() {
        let text = "[manifold]\nbuiltin = \"poincare-sphere\"\n[[scene]]\nkind = \"edges\"\nradius = 0.01\n";
        let setup = parse_config(text).unwrap().build().unwrap();
        assert_eq!(setup.scene.primitives.len(), 30);
    }

    #[test]
    fn bare_geometry_has_no_faces() {
        let m = ManifoldSpec {
            geometry: Some("SL2R".into()),
            ..Default::default()
        }
        .build()
        .unwrap();
        assert!(m.is_bare());
    }

    #[test]
    fn ball_outside_domain_is_rejected() {
        let err = parse_config(&MINIMAL.replace("[0.5, 0.5, 0.5]", "[1.5, 0.5, 0.5]")).unwrap_err();
        assert!(matches!(err, Error::Schema { ref field, .. } if field == "scene[0].center"));
    }
}
