//! Camera model, direct and one-bounce illumination, and parallel image
//! rendering.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::GeometryKind;
use crate::quotient::{Isometry, QuotientManifold};
use crate::scene::{march, Hit, MarchOutcome, MarchSettings, Ray, Rgb, Scene};
use crate::tensor::Frame;
use crate::{GeodesicState, Geometry, Vec4};

/// Offset along the outgoing direction before tracing a secondary ray.
pub const SECONDARY_OFFSET: f64 = 1e-4;
/// Slack when deciding whether a shadow ray reached its light.
pub const SHADOW_SLACK: f64 = 1e-3;
/// Tolerance when matching the holonomy of a shadow hit against a light image.
const IMAGE_TOL: f64 = 1e-6;
pub const THREADS_ENV: &str = "THURSTON_THREADS";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    /// `vectors = [n, u, w]`: optical axis, up, and `n ∧ u`.
    pub frame: Frame<f64, 4>,
    pub focal: f64,
    /// `[a, b, c, d]`: the image spans `[a, b]` along `u` and `[c, d]` along `w`.
    pub rect: [f64; 4],
    /// Pixel rows (along `u`).
    pub rows: usize,
    /// Pixel columns (along `w`).
    pub cols: usize,
}

impl Camera {
    pub fn position(&self) -> Vec4 {
        self.frame.base
    }

    pub fn dx(&self) -> f64 {
        (self.rect[1] - self.rect[0]) / self.rows as f64
    }

    pub fn dy(&self) -> f64 {
        (self.rect[3] - self.rect[2]) / self.cols as f64
    }

    /// Image-plane coordinates `(x, y)` of sample `(i, j)` with sub-pixel jitter.
    pub fn sample_point(&self, i: usize, j: usize, jitter: (f64, f64)) -> (f64, f64) {
        (
            self.rect[0] + (i as f64 + jitter.0) * self.dx(),
            self.rect[2] + (j as f64 + jitter.1) * self.dy(),
        )
    }
}

/// Builds a camera at `p` looking along `n` with up vector `u`; the frame is
/// Gram–Schmidt orthonormalized under the metric at `p`.
pub fn build_camera(
    geom: &Geometry,
    p: Vec4,
    n: Vec4,
    u: Vec4,
    focal: f64,
    rect: [f64; 4],
    resolution: (usize, usize),
) -> Result<Camera> {
    if !(focal > 0.0) {
        return Err(Error::schema("camera.focal", "focal > 0 is required"));
    }
    if !(rect[1] > rect[0] && rect[3] > rect[2]) {
        return Err(Error::schema("camera.rect", "rectangle must satisfy b > a and d > c"));
    }
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::schema("render.resolution", "resolution must be at least 1x1"));
    }
    let frame = geom.tangent_frame(&p, &n, &u)?;
    if frame.signs[0] <= 0.0 {
        return Err(Error::schema("camera.forward", "optical direction must be spacelike"));
    }
    Ok(Camera {
        frame,
        focal,
        rect,
        rows: resolution.0,
        cols: resolution.1,
    })
}

/// Unit initial velocity of the ray through sample `(i, j)`.
pub fn pixel_direction(cam: &Camera, geom: &Geometry, i: usize, j: usize, jitter: (f64, f64)) -> Result<Vec4> {
    let (x, y) = cam.sample_point(i, j, jitter);
    let [n, u, w] = cam.frame.vectors;
    geom.normalize(&cam.position(), &(n * cam.focal + u * x + w * y))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub spp: u32,
    /// Adds the one-bounce Monte Carlo term.
    pub indirect: bool,
    pub hemisphere_samples: u32,
    pub ambient: f64,
    pub seed: u64,
    /// Minimum number of image rows handed to a worker at once.
    pub tile_rows: usize,
    pub t_max: f64,
    pub max_crossings: u32,
    pub shadow_crossings: u32,
    /// Longest group word used to place images of each light.
    pub light_images: usize,
    pub march_step: f64,
}

impl RenderSettings {
    pub fn for_geometry(kind: GeometryKind) -> Self {
        RenderSettings {
            spp: 1,
            indirect: false,
            hemisphere_samples: 16,
            ambient: 0.05,
            seed: 1,
            tile_rows: 4,
            t_max: default_ray_length(kind),
            max_crossings: 16,
            shadow_crossings: 64,
            light_images: 1,
            march_step: crate::scene::DEFAULT_MARCH_STEP,
        }
    }
}

/// Ray length at which marching gives up, per geometry.
pub fn default_ray_length(kind: GeometryKind) -> f64 {
    match kind {
        GeometryKind::E3 => 30.0,
        // geodesics close up after 2π
        GeometryKind::S3 => 2.0 * std::f64::consts::PI,
        GeometryKind::H3 | GeometryKind::S2xR | GeometryKind::H2xR => 12.0,
        GeometryKind::Nil | GeometryKind::Sol | GeometryKind::Sl2r => 10.0,
    }
}

/// Horizon and zenith colours of the background gradient.
fn background_colors(kind: GeometryKind) -> (Rgb, Rgb) {
    match kind {
        GeometryKind::E3 => ([0.55, 0.60, 0.70], [0.15, 0.20, 0.35]),
        GeometryKind::S3 => ([0.70, 0.55, 0.45], [0.30, 0.15, 0.20]),
        GeometryKind::H3 => ([0.45, 0.65, 0.55], [0.10, 0.25, 0.25]),
        GeometryKind::S2xR => ([0.65, 0.60, 0.40], [0.25, 0.20, 0.10]),
        GeometryKind::H2xR => ([0.45, 0.55, 0.70], [0.10, 0.10, 0.30]),
        GeometryKind::Nil => ([0.60, 0.50, 0.65], [0.20, 0.10, 0.30]),
        GeometryKind::Sol => ([0.55, 0.65, 0.45], [0.15, 0.30, 0.10]),
        GeometryKind::Sl2r => ([0.70, 0.45, 0.55], [0.30, 0.10, 0.15]),
    }
}

/// Background radiance for a primary ray through image-plane point `(x, y)`.
pub fn background(kind: GeometryKind, focal: f64, x: f64, y: f64) -> Rgb {
    let up = x / (focal * focal + x * x + y * y).sqrt();
    let s = 0.5 * (1.0 + up);
    let (h, z) = background_colors(kind);
    std::array::from_fn(|c| h[c] + (z[c] - h[c]) * s)
}

/// Solid angle of a ball of radius `r` at geodesic distance `d`, from the
/// area of the geodesic sphere through the shading point, capped at a hemisphere.
pub fn light_solid_angle(kind: GeometryKind, r: f64, d: f64) -> f64 {
    let s = match kind {
        GeometryKind::S3 => d.sin(),
        GeometryKind::H3 => d.sinh(),
        _ => d,
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    if s.abs() < 1e-12 {
        return two_pi;
    }
    (std::f64::consts::PI * r * r / (s * s)).min(two_pi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LightImage {
    primitive: usize,
    /// Group element placing this image: `center = word(light centre)`.
    word: Isometry,
    center: Vec4,
    radius: f64,
    emission: Rgb,
}

/// Per-render diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    /// Pixels where geodesic evaluation or shading failed.
    pub numeric_failures: u64,
    /// Pixels whose primary rays left the coordinate chart.
    pub outside_chart: u64,
    /// Histogram of boundary crossings of primary rays, indexed by count.
    pub crossings: Vec<u64>,
}

impl RenderStats {
    fn merge(&mut self, other: &RenderStats) {
        self.numeric_failures += other.numeric_failures;
        self.outside_chart += other.outside_chart;
        if self.crossings.len() < other.crossings.len() {
            self.crossings.resize(other.crossings.len(), 0);
        }
        for (a, b) in self.crossings.iter_mut().zip(&other.crossings) {
            *a += b;
        }
    }

    fn record_crossings(&mut self, n: u32) {
        let n = n as usize;
        if self.crossings.len() <= n {
            self.crossings.resize(n + 1, 0);
        }
        self.crossings[n] += 1;
    }
}

/// Linear RGB image, row-major with the top-left pixel first.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        ImageGrid {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    /// Clamped, gamma-encoded 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|px| px.map(encode_channel))
            .collect()
    }

    pub fn write_ppm(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_rgb8())
    }

    pub fn ppm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_ppm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn write_png(&self, out: impl Write) -> std::io::Result<()> {
        let mut enc = png::Encoder::new(out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(std::io::Error::other)?;
        writer.write_image_data(&self.to_rgb8()).map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)
    }

    pub fn png_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_png(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Largest per-channel difference after 8-bit encoding, in units of 1/255.
    pub fn max_channel_diff(&self, other: &ImageGrid) -> u8 {
        self.to_rgb8()
            .iter()
            .zip(other.to_rgb8())
            .map(|(a, b)| a.abs_diff(b))
            .max()
            .unwrap_or(0)
    }
}

pub fn encode_channel(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v.powf(1.0 / 2.2) * 255.0).round() as u8
}

/// Per-sample random stream, independent of scheduling.
pub fn sample_rng(seed: u64, i: usize, j: usize, sample: u32) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [i as u64, j as u64, sample as u64] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Renderer<'a> {
    pub manifold: &'a QuotientManifold,
    pub scene: &'a Scene,
    pub settings: RenderSettings,
    lights: Vec<LightImage>,
}

enum PixelError {
    OutsideChart,
    Numeric,
}

impl<'a> Renderer<'a> {
    pub fn new(manifold: &'a QuotientManifold, scene: &'a Scene, settings: RenderSettings) -> Result<Self> {
        let words = manifold.words(settings.light_images)?;
        let mut lights = Vec::new();
        for (idx, prim) in scene.lights() {
            let center = prim.center().expect("lights are balls");
            for g in &words {
                lights.push(LightImage {
                    primitive: idx,
                    word: *g,
                    center: g.apply_point(&center),
                    radius: prim.radius(),
                    emission: prim.material.emission,
                });
            }
        }
        Ok(Renderer {
            manifold,
            scene,
            settings,
            lights,
        })
    }

    fn geom(&self) -> &Geometry {
        &self.manifold.geometry
    }

    fn march_settings(&self) -> MarchSettings {
        MarchSettings {
            step: self.settings.march_step,
        }
    }

    /// Traces a ray from `state` through the quotient.
    pub fn trace(&self, state: GeodesicState, t_max: f64, max_crossings: u32) -> Result<MarchOutcome> {
        let ray = Ray {
            origin: state,
            t_max,
            max_crossings,
        };
        march(self.manifold, self.scene, &ray, &self.march_settings())
    }

    /// Emission plus next-event estimation over every light image, plus ambient.
    pub fn shade_direct(&self, hit: &Hit) -> Rgb {
        let mat = self.scene.primitives[hit.primitive].material;
        let mut out = mat.emission;
        if mat.albedo.iter().all(|&a| a == 0.0) {
            return out;
        }
        let kind = self.geom().kind();
        for light in &self.lights {
            let Some((cos, d)) = self.light_visibility(hit, light) else {
                continue;
            };
            let omega = light_solid_angle(kind, light.radius, d);
            for c in 0..3 {
                out[c] += mat.albedo[c] / std::f64::consts::PI * light.emission[c] * cos * omega;
            }
        }
        for c in 0..3 {
            out[c] += self.settings.ambient * mat.albedo[c];
        }
        out
    }

    /// `(g(w_l, N), distance)` for an unoccluded light facing the surface.
    fn light_visibility(&self, hit: &Hit, light: &LightImage) -> Option<(f64, f64)> {
        let geom = self.geom();
        let q = hit.state.position;
        let (dir, d) = geom.connect(&q, &light.center).ok()?;
        if d <= light.radius {
            return None;
        }
        let cos = geom.dot(&q, &dir, &hit.normal).ok()?;
        if !(cos > 0.0) {
            return None;
        }
        let start = geom.geodesic(&GeodesicState::new(q, dir), SECONDARY_OFFSET).ok()?;
        match self.trace(start, d, self.settings.shadow_crossings).ok()? {
            MarchOutcome::Miss { .. } => Some((cos, d)),
            MarchOutcome::Hit(h) => {
                // the hit copy sits at holonomy⁻¹(centre), so it is this image iff holonomy ∘ word = id
                let same_image = h.primitive == light.primitive
                    && h.holonomy.compose(&light.word).is_ok_and(|g| g.is_identity(IMAGE_TOL));
                let reached = same_image || h.t + SECONDARY_OFFSET >= d - light.radius - SHADOW_SLACK;
                reached.then_some((cos, d))
            }
        }
    }

    /// One-bounce Monte Carlo estimate with cosine-weighted hemisphere samples.
    pub fn shade_indirect(&self, hit: &Hit, rng: &mut impl Rng) -> Rgb {
        let mat = self.scene.primitives[hit.primitive].material;
        let k = self.settings.hemisphere_samples.max(1);
        let mut sum = [0.0; 3];
        if mat.albedo.iter().all(|&a| a == 0.0) {
            return sum;
        }
        let Some(frame) = self.hemisphere_frame(hit) else {
            return sum;
        };
        let geom = self.geom();
        let q = hit.state.position;
        let [n, t1, t2] = frame.vectors;
        for _ in 0..k {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let r = u1.sqrt();
            let phi = 2.0 * std::f64::consts::PI * u2;
            let raw = n * (1.0 - u1).sqrt() + t1 * (r * phi.cos()) + t2 * (r * phi.sin());
            let Ok(dir) = geom.normalize(&q, &raw) else {
                continue;
            };
            let Ok(start) = geom.geodesic(&GeodesicState::new(q, dir), SECONDARY_OFFSET) else {
                continue;
            };
            if let Ok(MarchOutcome::Hit(bounce)) = self.trace(start, self.settings.t_max, self.settings.max_crossings) {
                let mut l = self.shade_direct(&bounce);
                // emission of sampled lights is already in the direct term
                if self.lights.iter().any(|li| li.primitive == bounce.primitive) {
                    let e = self.scene.primitives[bounce.primitive].material.emission;
                    for c in 0..3 {
                        l[c] -= e[c];
                    }
                }
                for c in 0..3 {
                    sum[c] += mat.albedo[c] * l[c];
                }
            }
        }
        sum.map(|s| s / k as f64)
    }

    fn hemisphere_frame(&self, hit: &Hit) -> Option<Frame<f64, 4>> {
        let geom = self.geom();
        (0..4).find_map(|i| {
            geom.tangent_frame(&hit.state.position, &hit.normal, &Vec4::unit(i))
                .ok()
        })
    }

    /// Radiance of one primary sample.
    fn sample(&self, cam: &Camera, i: usize, j: usize, rng: &mut ChaCha8Rng, stats: &mut RenderStats) -> std::result::Result<Rgb, PixelError> {
        let jitter = if self.settings.spp == 1 {
            (0.5, 0.5)
        } else {
            (rng.random(), rng.random())
        };
        let geom = self.geom();
        let dir = pixel_direction(cam, geom, i, j, jitter).map_err(|_| PixelError::Numeric)?;
        let outcome = self
            .trace(GeodesicState::new(cam.position(), dir), self.settings.t_max, self.settings.max_crossings)
            .map_err(|e| match e {
                Error::OutsideChart => PixelError::OutsideChart,
                _ => PixelError::Numeric,
            })?;
        match outcome {
            MarchOutcome::Hit(hit) => {
                stats.record_crossings(hit.crossings);
                let mut c = self.shade_direct(&hit);
                if self.settings.indirect {
                    let ind = self.shade_indirect(&hit, rng);
                    for k in 0..3 {
                        c[k] += ind[k];
                    }
                }
                Ok(c)
            }
            MarchOutcome::Miss { crossings, .. } => {
                stats.record_crossings(crossings);
                let (x, y) = cam.sample_point(i, j, jitter);
                Ok(background(geom.kind(), cam.focal, x, y))
            }
        }
    }

    fn pixel(&self, cam: &Camera, i: usize, j: usize, stats: &mut RenderStats) -> Rgb {
        let spp = self.settings.spp.max(1);
        let mut acc = [0.0; 3];
        let mut failed = None;
        for s in 0..spp {
            let mut rng = sample_rng(self.settings.seed, i, j, s);
            let c = match self.sample(cam, i, j, &mut rng, stats) {
                Ok(c) => c,
                Err(e) => {
                    failed.get_or_insert(e);
                    let (x, y) = cam.sample_point(i, j, (0.5, 0.5));
                    background(self.geom().kind(), cam.focal, x, y)
                }
            };
            for k in 0..3 {
                acc[k] += c[k];
            }
        }
        match failed {
            Some(PixelError::OutsideChart) => stats.outside_chart += 1,
            Some(PixelError::Numeric) => stats.numeric_failures += 1,
            None => {}
        }
        acc.map(|a| a / spp as f64)
    }

    /// Renders the full image. Honours `THURSTON_THREADS` when set.
    pub fn render(&self, cam: &Camera) -> (ImageGrid, RenderStats) {
        let never = AtomicBool::new(false);
        self.render_cancellable(cam, &never).expect("not cancelled")
    }

    /// Like [`Self::render`], giving up with `None` once `cancel` is set.
    pub fn render_cancellable(&self, cam: &Camera, cancel: &AtomicBool) -> Option<(ImageGrid, RenderStats)> {
        match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
            Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| self.render_rows(cam, cancel)),
                Err(_) => self.render_rows(cam, cancel),
            },
            _ => self.render_rows(cam, cancel),
        }
    }

    fn render_rows(&self, cam: &Camera, cancel: &AtomicBool) -> Option<(ImageGrid, RenderStats)> {
        let rows: Vec<(Vec<Rgb>, RenderStats)> = (0..cam.rows)
            .into_par_iter()
            .with_min_len(self.settings.tile_rows.max(1))
            .map(|row| {
                let mut stats = RenderStats::default();
                if cancel.load(Ordering::Relaxed) {
                    return (Vec::new(), stats);
                }
                // image rows run top to bottom while `i` grows along `u`
                let i = cam.rows - 1 - row;
                let line = (0..cam.cols).map(|j| self.pixel(cam, i, j, &mut stats)).collect();
                (line, stats)
            })
            .collect();
        if cancel.load(Ordering::Relaxed) {
            return None;
        }
        let mut image = ImageGrid::new(cam.cols, cam.rows, [0.0; 3]);
        let mut stats = RenderStats::default();
        for (row, (line, s)) in rows.into_iter().enumerate() {
            image.pixels[row * cam.cols..(row + 1) * cam.cols].copy_from_slice(&line);
            stats.merge(&s);
        }
        Some((image, stats))
    }
}

/// Convenience wrapper around [`Renderer::render`].
pub fn render(manifold: &QuotientManifold, scene: &Scene, cam: &Camera, settings: &RenderSettings) -> Result<(ImageGrid, RenderStats)> {
    Ok(Renderer::new(manifold, scene, *settings)?.render(cam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Material, Primitive};
    use crate::tensor::Vector;
    use crate::Vec3;
    use std::f64::consts::PI;

    fn e(i: usize) -> Vec4 {
        Vec4::unit(i)
    }

    fn e3_camera(res: usize) -> Camera {
        let g = Geometry::new(GeometryKind::E3);
        build_camera(&g, Vec4::zero(), e(0), e(1), 1.0, [-1.0, 1.0, -1.0, 1.0], (res, res)).unwrap()
    }

    #[test]
    fn e3_camera_completes_frame() {
        let cam = e3_camera(2);
        assert!(cam.frame.vectors[2].max_abs_diff(&e(2)) < 1e-15);
    }

    #[test]
    fn nil_camera_normalizes_up() {
        let g = Geometry::new(GeometryKind::Nil);
        let p = Vector([1.0, 0.0, 0.0, 0.0]);
        let cam = build_camera(&g, p, e(0), e(1), 1.0, [-1.0, 1.0, -1.0, 1.0], (2, 2)).unwrap();
        let u = cam.frame.vectors[1];
        assert!((u[1] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((g.norm_squared(&p, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_frame_is_degenerate() {
        let g = Geometry::new(GeometryKind::E3);
        let err = build_camera(&g, Vec4::zero(), e(0), e(0) * 2.0, 1.0, [-1.0, 1.0, -1.0, 1.0], (2, 2));
        assert_eq!(err.unwrap_err(), Error::DegenerateFrame);
    }

    #[test]
    fn centre_and_corner_directions() {
        let g = Geometry::new(GeometryKind::E3);
        let cam = e3_camera(2);
        let centre = pixel_direction(&cam, &g, 1, 1, (0.0, 0.0)).unwrap();
        assert!(centre.max_abs_diff(&e(0)) < 1e-15);
        let corner = pixel_direction(&cam, &g, 0, 0, (0.0, 0.0)).unwrap();
        let want = Vector([1.0, -1.0, -1.0, 0.0]) / 3f64.sqrt();
        assert!(corner.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn pixel_directions_are_unit_in_every_geometry() {
        for kind in GeometryKind::ALL {
            let g = Geometry::new(kind);
            let p = g.origin();
            let n = g.tangent_from_local(&p, &Vec3::new(1.0, 0.0, 0.0));
            // e2 is null for the SL2R form at the origin
            let up = if kind == GeometryKind::Sl2r { Vec3::new(0.0, 1.0, 1.0) } else { Vec3::new(0.0, 1.0, 0.0) };
            let u = g.tangent_from_local(&p, &up);
            let cam = build_camera(&g, p, n, u, 1.0, [-0.5, 0.5, -0.5, 0.5], (3, 3)).unwrap();
            for (i, j) in [(0, 0), (1, 2), (2, 1)] {
                let v = pixel_direction(&cam, &g, i, j, (0.3, 0.7)).unwrap();
                assert!((g.norm_squared(&p, &v).unwrap() - 1.0).abs() < 1e-9, "{kind}");
            }
        }
    }

    fn lit_setup(occluder: bool) -> (QuotientManifold, Scene, Hit) {
        let g = Geometry::new(GeometryKind::E3);
        let m = QuotientManifold::bare(g);
        // πr²/d² = 1 at d = 2
        let r = 2.0 / PI.sqrt();
        let mut prims = vec![
            Primitive::ball(&g, Vec3::new(0.0, 0.0, -1.0), 1.0, Material::diffuse([1.0; 3])).unwrap(),
            Primitive::ball(&g, Vec3::new(0.0, 0.0, 2.0), r, Material::emissive([1.0; 3])).unwrap(),
        ];
        if occluder {
            prims.push(Primitive::ball(&g, Vec3::new(0.0, 0.0, 0.5), 0.2, Material::diffuse([0.5; 3])).unwrap());
        }
        let hit = Hit {
            t: 1.0,
            state: GeodesicState::new(Vec4::zero(), -e(2)),
            primitive: 0,
            normal: e(2),
            crossings: 0,
            holonomy: crate::quotient::Isometry::identity(GeometryKind::E3),
        };
        (m, Scene::new(prims), hit)
    }

    fn no_ambient() -> RenderSettings {
        RenderSettings {
            ambient: 0.0,
            ..RenderSettings::for_geometry(GeometryKind::E3)
        }
    }

    #[test]
    fn light_along_normal_gives_one_over_pi() {
        let (m, scene, hit) = lit_setup(false);
        let r = Renderer::new(&m, &scene, no_ambient()).unwrap();
        for c in r.shade_direct(&hit) {
            assert!((c - 1.0 / PI).abs() < 1e-12, "{c}");
        }
    }

    #[test]
    fn occluded_point_gets_ambient_only() {
        let (m, scene, hit) = lit_setup(true);
        let settings = RenderSettings {
            ambient: 0.1,
            ..no_ambient()
        };
        let r = Renderer::new(&m, &scene, settings).unwrap();
        assert_eq!(r.shade_direct(&hit), [0.1; 3]);
    }

    #[test]
    fn grazing_light_gets_ambient_only() {
        let (m, scene, mut hit) = lit_setup(false);
        hit.normal = e(0);
        let settings = RenderSettings {
            ambient: 0.1,
            ..no_ambient()
        };
        let r = Renderer::new(&m, &scene, settings).unwrap();
        assert_eq!(r.shade_direct(&hit), [0.1; 3]);
    }

    #[test]
    fn indirect_without_emitters_is_black() {
        let (m, mut scene, hit) = lit_setup(false);
        scene.primitives.truncate(1);
        let r = Renderer::new(&m, &scene, no_ambient()).unwrap();
        let mut rng = sample_rng(3, 0, 0, 0);
        assert_eq!(r.shade_indirect(&hit, &mut rng), [0.0; 3]);
    }

    #[test]
    fn indirect_skips_emission_of_sampled_lights() {
        let (m, scene, hit) = lit_setup(false);
        let r = Renderer::new(&m, &scene, no_ambient()).unwrap();
        let mut rng = sample_rng(3, 0, 0, 0);
        assert_eq!(r.shade_indirect(&hit, &mut rng), [0.0; 3]);
    }

    #[test]
    fn light_image_hidden_behind_another_copy_is_occluded() {
        let m = crate::quotient::builtin_manifold("flat-torus").unwrap();
        let g = m.geometry;
        let (center, radius) = ([0.5, 0.5, 0.5], 0.1);
        let scene = Scene::new(vec![
            Primitive::ball(&g, Vec3::new(0.5, 0.5, 0.05), 0.05, Material::diffuse([1.0; 3])).unwrap(),
            Primitive::ball(&g, Vector(center), radius, Material::emissive([1.0; 3])).unwrap(),
        ]);
        let q = [0.5, 0.5, 0.1];
        let hit = Hit {
            t: 1.0,
            state: GeodesicState::new(Vector(q).extend(0.0), -e(2)),
            primitive: 0,
            normal: e(2),
            crossings: 0,
            holonomy: crate::quotient::Isometry::identity(GeometryKind::E3),
        };
        // the image at +e3 lies straight behind the light; the one at -e3 faces away
        let visible = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
        let expected: f64 = visible
            .iter()
            .map(|o: &[f64; 3]| {
                let v: [f64; 3] = std::array::from_fn(|k| center[k] + o[k] - q[k]);
                let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                (v[2] / d) * radius * radius / (d * d)
            })
            .sum();
        let r = Renderer::new(&m, &scene, no_ambient()).unwrap();
        for c in r.shade_direct(&hit) {
            assert!((c - expected).abs() < 1e-9, "{c} vs {expected}");
        }
    }

    #[test]
    fn empty_scene_is_uniform_background_per_row() {
        let g = Geometry::new(GeometryKind::E3);
        let m = QuotientManifold::bare(g);
        let scene = Scene::default();
        let cam = e3_camera(4);
        let (img, stats) = render(&m, &scene, &cam, &RenderSettings::for_geometry(GeometryKind::E3)).unwrap();
        for row in 0..4 {
            let (x, _) = cam.sample_point(3 - row, 0, (0.5, 0.5));
            for col in 0..4 {
                let (_, y) = cam.sample_point(3 - row, col, (0.5, 0.5));
                assert_eq!(img.get(row, col), background(GeometryKind::E3, 1.0, x, y));
            }
        }
        assert_eq!(stats.numeric_failures, 0);
    }

    #[test]
    fn cancelled_render_returns_nothing() {
        let g = Geometry::new(GeometryKind::E3);
        let m = QuotientManifold::bare(g);
        let scene = Scene::default();
        let r = Renderer::new(&m, &scene, RenderSettings::for_geometry(GeometryKind::E3)).unwrap();
        assert!(r.render_cancellable(&e3_camera(4), &AtomicBool::new(true)).is_none());
    }

    #[test]
    fn ppm_header_and_gamma() {
        let img = ImageGrid::new(2, 1, [1.0, 0.0, 0.5]);
        let bytes = img.ppm_bytes();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[11..14], &[255, 0, 186]);
        assert_eq!(encode_channel(-1.0), 0);
        assert_eq!(encode_channel(f64::NAN), 0);
    }

    #[test]
    fn rng_streams_differ_per_pixel() {
        let a: u64 = sample_rng(1, 0, 0, 0).random();
        let b: u64 = sample_rng(1, 0, 1, 0).random();
        let c: u64 = sample_rng(1, 0, 0, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
