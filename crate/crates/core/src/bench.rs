//! Geodesic evaluation throughput and speed-conservation statistics.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{GeodesicWalker, GeometryKind};
use crate::{GeodesicState, Geometry, Vec3};

/// A unit-speed state with local position uniform in `[-spread, spread]³`
/// and a uniformly distributed spacelike direction.
pub fn random_unit_state(geom: &Geometry, rng: &mut impl Rng, spread: f64) -> Result<GeodesicState> {
    let local = Vec3::new(
        rng.random_range(-spread..=spread),
        rng.random_range(-spread..=spread),
        rng.random_range(-spread..=spread),
    );
    let p = geom.from_local(&local)?;
    for _ in 0..1000 {
        let d = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n2 = d.norm_squared();
        if !(1e-6..=1.0).contains(&n2) {
            continue;
        }
        let v = geom.tangent_from_local(&p, &d);
        if geom.norm_squared(&p, &v)? > 1e-6 {
            return Ok(GeodesicState::new(p, geom.normalize(&p, &v)?));
        }
    }
    Err(Error::NumericFailure("no spacelike direction found"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub geometry: GeometryKind,
    pub rays: usize,
    pub t: f64,
    pub seconds: f64,
    /// Rays that left the coordinate chart before `t`.
    pub left_chart: usize,
    pub failures: usize,
    pub max_speed_error: f64,
    pub mean_speed_error: f64,
    /// Nil only: largest position gap between the closed form and RK4.
    pub closed_form_vs_rk4: Option<f64>,
}

impl BenchReport {
    pub fn rays_per_second(&self) -> f64 {
        self.rays as f64 / self.seconds.max(1e-12)
    }

    /// `key=value` lines.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "geometry={}\nrays={}\nt={}\nseconds={:.6}\nrays_per_sec={:.1}\nmax_speed_error={:e}\nmean_speed_error={:e}\nleft_chart={}\nfailures={}\n",
            self.geometry,
            self.rays,
            self.t,
            self.seconds,
            self.rays_per_second(),
            self.max_speed_error,
            self.mean_speed_error,
            self.left_chart,
            self.failures
        );
        if let Some(d) = self.closed_form_vs_rk4 {
            s.push_str(&format!("closed_form_vs_rk4={d:e}\n"));
        }
        s
    }
}

/// Evaluates `rays` random unit geodesics to parameter `t` and measures the
/// drift of `g(γ', γ')` from its initial value.
pub fn run(kind: GeometryKind, rays: usize, t: f64, seed: u64) -> Result<BenchReport> {
    let geom = Geometry::new(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = (0..rays)
        .map(|_| random_unit_state(&geom, &mut rng, 0.5))
        .collect::<Result<Vec<_>>>()?;
    let clock = Instant::now();
    let ends: Vec<Result<GeodesicState>> = starts.iter().map(|s| geom.geodesic(s, t)).collect();
    let seconds = clock.elapsed().as_secs_f64();
    let (mut left_chart, mut failures, mut max, mut sum, mut n) = (0, 0, 0.0f64, 0.0, 0usize);
    for (s, end) in starts.iter().zip(&ends) {
        match end {
            Ok(e) => {
                let start = geom.norm_squared(&s.position, &s.velocity)?;
                let err = (geom.norm_squared(&e.position, &e.velocity)? - start).abs();
                max = max.max(err);
                sum += err;
                n += 1;
            }
            Err(Error::OutsideChart) => left_chart += 1,
            Err(_) => failures += 1,
        }
    }
    let closed_form_vs_rk4 = if kind == GeometryKind::Nil {
        let mut worst = 0.0f64;
        for (s, e) in starts.iter().zip(&ends) {
            let Ok(e) = e else { continue };
            let numeric = GeodesicWalker::numeric(&geom, *s)?.advance(t)?;
            worst = worst.max(numeric.position.max_abs_diff(&e.position));
        }
        Some(worst)
    } else {
        None
    };
    Ok(BenchReport {
        geometry: kind,
        rays,
        t,
        seconds,
        left_chart,
        failures,
        max_speed_error: max,
        mean_speed_error: if n > 0 { sum / n as f64 } else { 0.0 },
        closed_form_vs_rk4,
    })
}
