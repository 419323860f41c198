//! Synthetic scenes and a ring-geometry multi-laser scanner.
//!
//! Each beam hits the ground on a circle of fixed radius around its sensor,
//! so incidence angle and range stay constant over a revolution. A sample
//! reads the ground truth at the hit cell, passes it through the beam's
//! response `clamp(gain * 255 (x/255)^gamma + offset)`, adds Gaussian noise
//! and is clamped to `[0, 255]`.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::grid::{CellMap, GridSpec};
use crate::perspectives::RawMeasurement;
use crate::sum::NeumaierSum;

pub const RECIPES: [&str; 4] = ["lanes", "crosswalk", "blank", "checkerboard"];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundScene {
    /// Fully occupied ground truth.
    pub truth: CellMap,
    /// Road-paint cells.
    pub feature_mask: Vec<bool>,
}

/// Procedural scene description. Lengths are meters from the grid origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Recipe {
    /// Stripes running along x, repeating every `spacing` in y, optionally
    /// dashed with `(on, off)` lengths along x.
    Lanes {
        stripe_width: f64,
        spacing: f64,
        offset: f64,
        asphalt: f64,
        paint: f64,
        dash: Option<(f64, f64)>,
    },
    /// Bars running along y, repeating every `spacing` in x, confined to the
    /// middle half of the grid in y.
    Crosswalk {
        stripe_width: f64,
        spacing: f64,
        asphalt: f64,
        paint: f64,
    },
    Blank { level: f64 },
    Checkerboard { tile: f64, low: f64, high: f64 },
}

impl Recipe {
    /// Recipe with its default parameters.
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "lanes" => Recipe::Lanes {
                stripe_width: 0.3,
                spacing: 3.5,
                offset: 1.0,
                asphalt: 25.0,
                paint: 120.0,
                dash: None,
            },
            "crosswalk" => Recipe::Crosswalk {
                stripe_width: 0.5,
                spacing: 1.0,
                asphalt: 25.0,
                paint: 120.0,
            },
            "blank" => Recipe::Blank { level: 25.0 },
            "checkerboard" => Recipe::Checkerboard {
                tile: 1.0,
                low: 25.0,
                high: 120.0,
            },
            other => return Err(Error::UnknownRecipe(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Lanes { .. } => "lanes",
            Recipe::Crosswalk { .. } => "crosswalk",
            Recipe::Blank { .. } => "blank",
            Recipe::Checkerboard { .. } => "checkerboard",
        }
    }
}

fn check_level(v: f64, name: &'static str) -> Result<()> {
    if (0.0..=255.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(name, "level must lie in [0, 255]"))
    }
}

fn check_length(v: f64, name: &'static str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, "length must be positive and finite"))
    }
}

/// `true` when `t` falls in the first `width` of each `period`, shifted by `phase`.
fn in_band(t: f64, phase: f64, period: f64, width: f64) -> bool {
    let r = (t - phase) - libm::floor((t - phase) / period) * period;
    r < width
}

pub fn make_scene(spec: GridSpec, recipe: &Recipe) -> Result<GroundScene> {
    let h = spec.n_y as f64 * spec.cell_size;
    let paint_at: alloc::boxed::Box<dyn Fn(f64, f64) -> bool> = match *recipe {
        Recipe::Lanes {
            stripe_width,
            spacing,
            offset,
            asphalt,
            paint,
            dash,
        } => {
            check_length(stripe_width, "stripe_width")?;
            check_length(spacing, "spacing")?;
            check_level(asphalt, "asphalt")?;
            check_level(paint, "paint")?;
            if let Some((on, off)) = dash {
                check_length(on, "dash_on")?;
                check_length(off, "dash_off")?;
            }
            alloc::boxed::Box::new(move |x, y| {
                in_band(y, offset, spacing, stripe_width)
                    && dash.map_or(true, |(on, off)| in_band(x, 0.0, on + off, on))
            })
        }
        Recipe::Crosswalk {
            stripe_width,
            spacing,
            asphalt,
            paint,
        } => {
            check_length(stripe_width, "stripe_width")?;
            check_length(spacing, "spacing")?;
            check_level(asphalt, "asphalt")?;
            check_level(paint, "paint")?;
            alloc::boxed::Box::new(move |x, y| {
                y >= h / 4.0 && y < 3.0 * h / 4.0 && in_band(x, 0.0, spacing, stripe_width)
            })
        }
        Recipe::Blank { level } => {
            check_level(level, "level")?;
            alloc::boxed::Box::new(|_, _| false)
        }
        Recipe::Checkerboard { tile, low, high } => {
            check_length(tile, "tile")?;
            check_level(low, "low")?;
            check_level(high, "high")?;
            alloc::boxed::Box::new(move |x, y| {
                (libm::floor(x / tile) as i64 + libm::floor(y / tile) as i64).rem_euclid(2) == 1
            })
        }
    };
    let (background, feature) = match *recipe {
        Recipe::Lanes { asphalt, paint, .. } | Recipe::Crosswalk { asphalt, paint, .. } => (asphalt, paint),
        Recipe::Blank { level } => (level, level),
        Recipe::Checkerboard { low, high, .. } => (low, high),
    };
    let mut values = vec![background; spec.len()];
    let mut feature_mask = vec![false; spec.len()];
    for n in 0..spec.len() {
        let (row, col) = spec.row_col(n);
        let x = (col as f64 + 0.5) * spec.cell_size;
        let y = (row as f64 + 0.5) * spec.cell_size;
        if paint_at(x, y) {
            values[n] = feature;
            feature_mask[n] = true;
        }
    }
    Ok(GroundScene {
        truth: CellMap::from_values(spec, values)?,
        feature_mask,
    })
}

/// One laser: its response, noise and fixed ground-ring geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserModel {
    pub beam: u32,
    pub gain: f64,
    pub offset: f64,
    pub gamma_exp: f64,
    /// Noise standard deviation in gray levels.
    pub sigma: f64,
    /// Ground-ring radius around the sensor, meters.
    pub ring_radius: f64,
    pub sensor_height: f64,
    /// Sensor position in the vehicle frame (x forward, y left), meters.
    pub mount: [f64; 2],
}

impl LaserModel {
    /// Noise-free identity response.
    pub fn ideal(beam: u32, ring_radius: f64) -> Self {
        Self {
            beam,
            gain: 1.0,
            offset: 0.0,
            gamma_exp: 1.0,
            sigma: 0.0,
            ring_radius,
            sensor_height: 1.8,
            mount: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::param("gain", "must be non-negative for a monotone response"));
        }
        if !self.offset.is_finite() {
            return Err(Error::param("offset", "must be finite"));
        }
        if !(self.gamma_exp > 0.0 && self.gamma_exp.is_finite()) {
            return Err(Error::param("gamma_exp", "must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be non-negative"));
        }
        if !(self.ring_radius > 0.0 && self.ring_radius.is_finite()) {
            return Err(Error::param("ring_radius", "must be positive"));
        }
        if !(self.sensor_height > 0.0 && self.sensor_height.is_finite()) {
            return Err(Error::param("sensor_height", "must be positive"));
        }
        Ok(())
    }

    pub fn response(&self, x: f64) -> f64 {
        let base = libm::pow((x / 255.0).clamp(0.0, 1.0), self.gamma_exp) * 255.0;
        (self.gain * base + self.offset).clamp(0.0, 255.0)
    }

    /// Angle between the beam and the vertical at the ground hit, degrees.
    pub fn incidence_deg(&self) -> f64 {
        libm::atan2(self.ring_radius, self.sensor_height).to_degrees()
    }

    pub fn range_m(&self) -> f64 {
        libm::hypot(self.ring_radius, self.sensor_height)
    }
}

/// Geometry of a multi-sensor rig with evenly spread ring radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigConfig {
    pub sensors: usize,
    pub beams_per_sensor: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub sensor_height: f64,
    /// Lateral distance between neighboring sensors, meters.
    pub sensor_spacing: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            sensors: 2,
            beams_per_sensor: 32,
            min_radius: 3.0,
            max_radius: 14.0,
            sensor_height: 1.8,
            sensor_spacing: 0.6,
        }
    }
}

impl RigConfig {
    pub fn beam_count(&self) -> usize {
        self.sensors * self.beams_per_sensor
    }
}

/// Ideal-response beams for a rig. Radii interleave across sensors.
pub fn rig(cfg: &RigConfig) -> Result<Vec<LaserModel>> {
    let n = cfg.beam_count();
    if n == 0 {
        return Err(Error::param("beams", "rig needs at least one beam"));
    }
    if !(cfg.min_radius > 0.0 && cfg.max_radius >= cfg.min_radius) {
        return Err(Error::param("radius", "need 0 < min_radius <= max_radius"));
    }
    let beams = (0..n)
        .map(|i| {
            let sensor = i % cfg.sensors;
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let lateral = (sensor as f64 - (cfg.sensors as f64 - 1.0) / 2.0) * cfg.sensor_spacing;
            LaserModel {
                sensor_height: cfg.sensor_height,
                mount: [0.0, lateral],
                ..LaserModel::ideal(i as u32, cfg.min_radius + t * (cfg.max_radius - cfg.min_radius))
            }
        })
        .collect::<Vec<_>>();
    for b in &beams {
        b.validate()?;
    }
    Ok(beams)
}

/// Draws per-beam offsets and exponents uniformly from the given ranges and
/// sets a common noise level.
pub fn randomize_responses(
    beams: &mut [LaserModel],
    offset_range: (f64, f64),
    gamma_range: (f64, f64),
    sigma: f64,
    seed: u64,
) -> Result<()> {
    let uniform = |(lo, hi): (f64, f64), name| {
        Uniform::new_inclusive(lo, hi).map_err(|_| Error::param(name, "invalid range"))
    };
    let offsets = uniform(offset_range, "offset_range")?;
    let gammas = uniform(gamma_range, "gamma_range")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in beams.iter_mut() {
        b.offset = offsets.sample(&mut rng);
        b.gamma_exp = gammas.sample(&mut rng);
        b.sigma = sigma;
        b.validate()?;
    }
    Ok(())
}

/// Timestamped vehicle pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    /// Strictly increasing timestamps. A single waypoint scans one revolution.
    pub trajectory: Vec<Waypoint>,
    pub revolutions_per_second: f64,
    pub beams: Vec<LaserModel>,
    pub points_per_revolution_per_beam: usize,
    pub seed: u64,
}

impl ScanConfig {
    /// Vehicle parked at `(x, y)` for `revolutions` revolutions.
    pub fn stationary(x: f64, y: f64, revolutions: usize, beams: Vec<LaserModel>, points: usize, seed: u64) -> Self {
        let rps = 10.0;
        Self {
            trajectory: vec![
                Waypoint { t: 0.0, x, y, heading: 0.0 },
                Waypoint {
                    t: revolutions.max(1) as f64 / rps,
                    x,
                    y,
                    heading: 0.0,
                },
            ],
            revolutions_per_second: rps,
            beams,
            points_per_revolution_per_beam: points,
            seed,
        }
    }

    pub fn revolutions(&self) -> usize {
        match (self.trajectory.first(), self.trajectory.last()) {
            (Some(a), Some(b)) => {
                (libm::floor((b.t - a.t) * self.revolutions_per_second + 1e-9) as usize).max(1)
            }
            _ => 0,
        }
    }

    fn pose_at(&self, t: f64) -> (f64, f64, f64) {
        let tr = &self.trajectory;
        let i = tr.partition_point(|w| w.t <= t).clamp(1, tr.len().max(2) - 1);
        if tr.len() == 1 {
            return (tr[0].x, tr[0].y, tr[0].heading);
        }
        let (a, b) = (&tr[i - 1], &tr[i]);
        let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let dh = libm::remainder(b.heading - a.heading, 2.0 * PI);
        (a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), a.heading + s * dh)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub measurements: Vec<RawMeasurement>,
    /// Samples whose ground hit fell outside the scene.
    pub dropped: usize,
}

/// Simulates the scan. Identical configurations give identical output.
pub fn scan(scene: &GroundScene, cfg: &ScanConfig) -> Result<ScanOutput> {
    let spec = *scene.truth.spec();
    if cfg.trajectory.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if cfg.trajectory.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::param("trajectory", "timestamps must be strictly increasing"));
    }
    if let Some(w) = cfg.trajectory.iter().find(|w| spec.cell_of(w.x, w.y).is_none()) {
        return Err(Error::param(
            "trajectory",
            alloc::format!("waypoint ({}, {}) lies outside the scene", w.x, w.y),
        ));
    }
    if !(cfg.revolutions_per_second > 0.0 && cfg.revolutions_per_second.is_finite()) {
        return Err(Error::param("revolutions_per_second", "must be positive"));
    }
    if cfg.points_per_revolution_per_beam == 0 {
        return Err(Error::param("points_per_revolution_per_beam", "must be at least 1"));
    }
    for b in &cfg.beams {
        b.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points = cfg.points_per_revolution_per_beam;
    let spacing = 2.0 * PI / points as f64;
    let revolutions = cfg.revolutions();
    let t0 = cfg.trajectory[0].t;
    let golden = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut out = ScanOutput {
        measurements: Vec::with_capacity(revolutions * points * cfg.beams.len()),
        dropped: 0,
    };
    for k in 0..revolutions {
        let (vx, vy, vh) = cfg.pose_at(t0 + k as f64 / cfg.revolutions_per_second);
        let (sh, ch) = libm::sincos(vh);
        let turn = k as f64 * golden;
        let phase = (turn - libm::floor(turn)) * spacing;
        for beam in &cfg.beams {
            let sx = vx + ch * beam.mount[0] - sh * beam.mount[1];
            let sy = vy + sh * beam.mount[0] + ch * beam.mount[1];
            let incidence = beam.incidence_deg();
            let range = beam.range_m();
            for j in 0..points {
                let (sa, ca) = libm::sincos(vh + phase + j as f64 * spacing);
                let x = sx + beam.ring_radius * ca;
                let y = sy + beam.ring_radius * sa;
                let z: f64 = rng.sample(StandardNormal);
                let Some(n) = spec.cell_of(x, y) else {
                    out.dropped += 1;
                    continue;
                };
                let value = (beam.response(scene.truth.values()[n]) + beam.sigma * z).clamp(0.0, 255.0);
                out.measurements.push(RawMeasurement {
                    x_m: x,
                    y_m: y,
                    reflectivity: value,
                    beam: beam.beam,
                    incidence_deg: incidence,
                    range_m: range,
                });
            }
        }
    }
    if out.dropped > 0 {
        log::debug!("scan dropped {} samples outside the scene", out.dropped);
    }
    Ok(out)
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().copied().collect::<NeumaierSum>().value() / n;
    let var = samples
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<NeumaierSum>()
        .value()
        / n;
    (mean, libm::sqrt(var))
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

/// KL divergence in bits from the samples' histogram to the Gaussian with
/// their mean and standard deviation, both over `bins` equal-width bins
/// spanning the sample range.
pub fn kl_gaussian(samples: &[f64], bins: usize) -> Result<f64> {
    if samples.len() < 30 {
        return Err(Error::InsufficientOverlap {
            required: 30,
            found: samples.len(),
        });
    }
    if bins < 2 {
        return Err(Error::param("bins", "need at least 2 bins"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("samples", "must be finite"));
    }
    let (mean, std) = mean_std(samples);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(std > 0.0) || hi <= lo {
        return Err(Error::Degenerate("samples have zero variance"));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in samples {
        let i = (libm::floor((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let mut q: Vec<f64> = (0..bins)
        .map(|i| {
            let a = lo + i as f64 * width;
            let b = if i + 1 == bins { hi } else { a + width };
            normal_cdf((b - mean) / std) - normal_cdf((a - mean) / std)
        })
        .collect();
    let total: f64 = q.iter().copied().collect::<NeumaierSum>().value();
    for v in &mut q {
        *v = (*v / total).max(1e-12);
    }
    let n = samples.len() as f64;
    Ok(counts
        .iter()
        .zip(&q)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &qi)| {
            let p = c as f64 / n;
            p * libm::log2(p / qi)
        })
        .collect::<NeumaierSum>()
        .value())
}

fn distance_to_polyline(x: f64, y: f64, path: &[Waypoint]) -> f64 {
    if path.len() == 1 {
        return libm::hypot(x - path[0].x, y - path[0].y);
    }
    path.windows(2)
        .map(|w| {
            let (ax, ay, bx, by) = (w[0].x, w[0].y, w[1].x, w[1].y);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            libm::hypot(x - ax - t * dx, y - ay - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Ring-artifact statistic: background cells are grouped into bands of
/// `band_width` meters by distance to the trajectory; returns the
/// count-weighted variance of the per-band mean residual `map - truth`.
///
/// A map whose error does not depend on distance from the vehicle path
/// scores near zero regardless of any global offset.
pub fn ring_artifact_variance(map: &CellMap, scene: &GroundScene, trajectory: &[Waypoint], band_width: f64) -> Result<f64> {
    if map.spec() != scene.truth.spec() {
        return Err(Error::GridMismatch);
    }
    if trajectory.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if !(band_width > 0.0 && band_width.is_finite()) {
        return Err(Error::param("band_width", "must be positive and finite"));
    }
    let spec = map.spec();
    let mut bands: alloc::collections::BTreeMap<usize, (NeumaierSum, usize)> = Default::default();
    for (n, v) in map.iter_occupied() {
        if scene.feature_mask[n] {
            continue;
        }
        let (x, y) = spec.cell_center(n);
        let band = libm::floor(distance_to_polyline(x, y, trajectory) / band_width) as usize;
        let e = bands.entry(band).or_default();
        e.0.add(v - scene.truth.values()[n]);
        e.1 += 1;
    }
    let total: usize = bands.values().map(|b| b.1).sum();
    if total == 0 {
        return Err(Error::Empty("no occupied background cells"));
    }
    let means: Vec<(f64, f64)> = bands
        .values()
        .map(|(s, c)| (s.value() / *c as f64, *c as f64))
        .collect();
    let grand = means.iter().map(|(m, c)| m * c).collect::<NeumaierSum>().value() / total as f64;
    Ok(means
        .iter()
        .map(|(m, c)| c * (m - grand) * (m - grand))
        .collect::<NeumaierSum>()
        .value()
        / total as f64)
}
