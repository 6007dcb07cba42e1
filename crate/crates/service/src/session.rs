//! Camera state of one exploration session and navigation along geodesics.

use std::sync::atomic::AtomicBool;

use serde::Deserialize;
use thurston_core::config::{Config, Setup};
use thurston_core::render::{Camera, ImageGrid, RenderSettings, Renderer};
use thurston_core::tensor::{gram_schmidt, Frame};
use thurston_core::{Error, GeodesicState, Result, Vec4};

/// Geodesic length walked between boundary checks while moving.
const NAV_STEP: f64 = 0.05;
/// Largest `|g(v_i, v_j) - δ_ij|` accepted for a camera frame. Far out in the
/// SL2R chart the metric cancels too strongly for f64 to do better, and the
/// camera stalls there as it does at the chart edge.
const FRAME_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct NavCommand {
    pub forward: f64,
    pub right: f64,
    pub up: f64,
    pub yaw: f64,
    pub pitch: f64,
    /// Client frame time; informational only.
    pub dt: f64,
}

impl NavCommand {
    pub fn displacement(&self) -> f64 {
        (self.forward * self.forward + self.right * self.right + self.up * self.up).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.forward == 0.0 && self.right == 0.0 && self.up == 0.0 && self.yaw == 0.0 && self.pitch == 0.0
    }

    pub fn check(&self) -> Result<()> {
        let values = [self.forward, self.right, self.up, self.yaw, self.pitch];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("nav", "values must be finite"));
        }
        if self.displacement() > 1.0 {
            return Err(Error::schema("nav", "|displacement| <= 1 is required"));
        }
        if self.yaw.abs() > std::f64::consts::PI || self.pitch.abs() > std::f64::consts::PI {
            return Err(Error::schema("nav", "|yaw|, |pitch| <= pi is required"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quality {
    Preview,
    Full,
}

#[derive(Clone)]
pub struct Session {
    pub setup: Setup,
    pub camera: Camera,
}

impl Session {
    pub fn open(config: &Config) -> Result<Self> {
        config.validate()?;
        let setup = config.build()?;
        let camera = setup.camera;
        Ok(Session { setup, camera })
    }

    pub fn settings(&self, quality: Quality) -> RenderSettings {
        match quality {
            Quality::Full => self.setup.settings,
            Quality::Preview => RenderSettings {
                spp: 1,
                indirect: false,
                ..self.setup.settings
            },
        }
    }

    pub fn camera_for(&self, quality: Quality) -> Camera {
        match quality {
            Quality::Full => self.camera,
            Quality::Preview => Camera {
                rows: (self.camera.rows / 4).max(1),
                cols: (self.camera.cols / 4).max(1),
                ..self.camera
            },
        }
    }

    /// Renders the current view, or `None` if `cancel` was raised midway.
    pub fn render(&self, quality: Quality, cancel: &AtomicBool) -> Result<Option<ImageGrid>> {
        let renderer = Renderer::new(&self.setup.manifold, &self.setup.scene, self.settings(quality))?;
        Ok(renderer
            .render_cancellable(&self.camera_for(quality), cancel)
            .map(|(img, _)| img))
    }

    /// Moves and turns the camera. On error the camera is left unchanged.
    pub fn apply_nav(&mut self, cmd: &NavCommand) -> Result<()> {
        cmd.check()?;
        if cmd.is_zero() {
            return Ok(());
        }
        self.camera.frame = self.moved_frame(cmd).map_err(|e| match e {
            Error::OutsideChart | Error::DegenerateFrame | Error::SingularMetric { .. } => Error::ChartStall,
            e => e,
        })?;
        Ok(())
    }

    fn moved_frame(&self, cmd: &NavCommand) -> Result<Frame<f64, 4>> {
        let mut frame = self.camera.frame;
        if cmd.displacement() > 0.0 {
            frame = self.translate(&frame, cmd)?;
        }
        frame = self.orthonormalize(&frame)?;
        let [n, u, w] = frame.vectors;
        let [sn, su, sw] = frame.signs;
        // yaw turns within the (n, w) plane, pitch within the (n, u) plane
        let (n, w) = turn(n, w, sn, sw, cmd.yaw);
        let (n, u) = turn(n, u, sn, su, cmd.pitch);
        frame.vectors = [n, u, w];
        let frame = self.orthonormalize(&frame)?;
        let g = self.setup.manifold.geometry.metric_at(&frame.base)?;
        if frame.orthonormality_residual(&g) > FRAME_TOL {
            return Err(Error::ChartStall);
        }
        Ok(frame)
    }

    fn translate(&self, frame: &Frame<f64, 4>, cmd: &NavCommand) -> Result<Frame<f64, 4>> {
        let m = &self.setup.manifold;
        let geom = &m.geometry;
        let [n, u, w] = frame.vectors;
        let p = frame.base;
        let raw = n * cmd.forward + w * cmd.right + u * cmd.up;
        let dir = geom.normalize(&p, &raw)?;
        let length = cmd.displacement();
        let steps = (length / NAV_STEP).ceil().max(1.0) as usize;
        let h = length / steps as f64;
        let mut state = GeodesicState::new(p, dir);
        let mut vectors = frame.vectors;
        for _ in 0..steps {
            let next = geom.geodesic(&state, h)?;
            for v in &mut vectors {
                *v = geom.parallel_transport(&state, h, v)?;
            }
            state = next;
            if !m.is_bare() && !m.domain.contains(&state.position, 0.0) {
                let (reduced, g) = m.reduce(&state)?;
                for v in &mut vectors {
                    *v = g.apply_vector(&state.position, v);
                }
                state = reduced;
            }
        }
        let state = geom.reproject(&state)?;
        Ok(Frame {
            base: state.position,
            vectors: vectors.map(|v| geom.project_tangent(&state.position, &v)),
            signs: frame.signs,
        })
    }

    fn orthonormalize(&self, frame: &Frame<f64, 4>) -> Result<Frame<f64, 4>> {
        let geom = &self.setup.manifold.geometry;
        let p = frame.base;
        let g = geom.metric_at(&p)?;
        let vectors = frame.vectors.map(|v| geom.project_tangent(&p, &v));
        gram_schmidt(&g, p, vectors)
    }

    pub fn orthonormality_residual(&self) -> Result<f64> {
        let g = self.setup.manifold.geometry.metric_at(&self.camera.frame.base)?;
        Ok(self.camera.frame.orthonormality_residual(&g))
    }
}

/// Rotates (equal signs) or boosts (opposite signs) the pair `(a, b)` by `angle`.
fn turn(a: Vec4, b: Vec4, sa: f64, sb: f64, angle: f64) -> (Vec4, Vec4) {
    if angle == 0.0 {
        return (a, b);
    }
    if sa == sb {
        let (s, c) = angle.sin_cos();
        (a * c + b * s, b * c - a * s)
    } else {
        let (s, c) = (angle.sinh(), angle.cosh());
        (a * c + b * s, b * c + a * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use thurston_core::config::parse_config;
    use thurston_core::tensor::Vector;

    fn session(text: &str) -> Session {
        Session::open(&parse_config(text).unwrap()).unwrap()
    }

    fn torus() -> Session {
        session(
            "[manifold]\nbuiltin = \"flat-torus\"\n[camera]\nposition = [0.5, 0.5, 0.5]\nforward = [1.0, 0.0, 0.0]\n",
        )
    }

    #[test]
    fn torus_unit_step_wraps_around() {
        let mut s = torus();
        let before = s.camera;
        s.apply_nav(&NavCommand {
            forward: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert!(s.camera.position().max_abs_diff(&Vector([0.5, 0.5, 0.5, 0.0])) < 1e-12);
        for (a, b) in s.camera.frame.vectors.iter().zip(&before.frame.vectors) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }

    #[test]
    fn zero_command_is_a_no_op() {
        let mut s = torus();
        let before = s.camera;
        s.apply_nav(&NavCommand::default()).unwrap();
        assert_eq!(s.camera, before);
    }

    #[test]
    fn s3_full_circle_returns() {
        let mut s = session("[manifold]\ngeometry = \"S3\"\n");
        let before = s.camera;
        // 2π in commands of length at most 1
        for _ in 0..8 {
            s.apply_nav(&NavCommand {
                forward: std::f64::consts::PI / 4.0,
                ..Default::default()
            })
            .unwrap();
        }
        assert!(s.camera.position().max_abs_diff(&before.position()) < 1e-6);
        for (a, b) in s.camera.frame.vectors.iter().zip(&before.frame.vectors) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
    }

    #[test]
    fn oversized_commands_are_rejected() {
        let mut s = torus();
        let before = s.camera;
        let big = NavCommand {
            forward: 0.9,
            right: 0.9,
            ..Default::default()
        };
        assert!(s.apply_nav(&big).is_err());
        assert_eq!(s.camera, before);
    }

    #[test]
    fn sl2r_chart_edge_stalls() {
        let mut s = session(
            "[manifold]\ngeometry = \"SL2R\"\n[camera]\nposition = [-0.9, 0.0, 0.0]\nforward = [-1.0, 0.0, 0.0]\nup = [0.0, 1.0, 1.0]\n",
        );
        let cmd = NavCommand {
            forward: 1.0,
            ..Default::default()
        };
        // the singular plane is approached exponentially, so the margin is hit after a few dozen units
        for _ in 0..40 {
            let before = s.camera;
            match s.apply_nav(&cmd) {
                Ok(()) => assert!(s.camera.position()[0] < before.position()[0]),
                Err(e) => {
                    assert_eq!(e, Error::ChartStall);
                    assert_eq!(s.camera, before);
                    return;
                }
            }
        }
        panic!("never stalled at the chart edge");
    }

    #[test]
    fn nil_round_trip_keeps_position_and_orthonormality() {
        let mut s = session(thurston_core::bundled::get("nil-cube").unwrap());
        let start = s.camera.position();
        for cmd in [
            NavCommand { forward: 0.8, ..Default::default() },
            NavCommand { yaw: std::f64::consts::PI, ..Default::default() },
            NavCommand { forward: 0.8, ..Default::default() },
        ] {
            s.apply_nav(&cmd).unwrap();
        }
        assert!(s.camera.position().max_abs_diff(&start) < 1e-6);
        assert!(s.orthonormality_residual().unwrap() < 1e-6);
    }

    #[test]
    fn sl2r_yaw_is_a_boost() {
        let mut s = session(thurston_core::bundled::get("sl2r").unwrap());
        s.apply_nav(&NavCommand {
            yaw: 0.3,
            pitch: 0.2,
            ..Default::default()
        })
        .unwrap();
        assert!(s.orthonormality_residual().unwrap() < 1e-9);
        assert_eq!(s.camera.frame.signs, [1.0, 1.0, -1.0]);
    }
}
