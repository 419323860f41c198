//! Synthetic survey setups: a scene, a randomized rig and a drive.

use std::path::Path;

use reflectmap_core::perspectives::RawMeasurement;
use reflectmap_core::simulate::{make_scene, randomize_responses, rig, scan, GroundScene, LaserModel, Recipe, RigConfig, ScanConfig, Waypoint};
use reflectmap_core::GridSpec;

use crate::error::Result;
use crate::io;

/// Mixed into the seed for response randomization so that the response
/// draws and the scan noise come from distinct streams.
const RESPONSE_STREAM: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: GridSpec,
    pub recipe: Recipe,
    pub rig: RigConfig,
    pub offset_range: (f64, f64),
    pub gamma_range: (f64, f64),
    pub sigma: f64,
    pub revolutions: usize,
    pub points_per_revolution_per_beam: usize,
    /// Straight drive `(x0, y0, x1, y1)` in meters; `None` drives along the
    /// horizontal center line one meter clear of either edge.
    pub drive: Option<[f64; 4]>,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            grid: GridSpec::new(400, 400, 0.1, [0.0, 0.0]).expect("valid default grid"),
            recipe: Recipe::named("lanes").expect("known recipe"),
            rig: RigConfig::default(),
            offset_range: (-15.0, 15.0),
            gamma_range: (0.8, 1.25),
            sigma: 4.0,
            revolutions: 20,
            points_per_revolution_per_beam: 2000,
            drive: None,
            seed: 42,
        }
    }
}

pub struct Simulated {
    pub scene: GroundScene,
    pub beams: Vec<LaserModel>,
    pub trajectory: Vec<Waypoint>,
    pub measurements: Vec<RawMeasurement>,
    pub dropped: usize,
}

impl Scenario {
    pub fn trajectory(&self) -> Vec<Waypoint> {
        let g = &self.grid;
        let [x0, y0, x1, y1] = self.drive.unwrap_or_else(|| {
            let (w, h) = (g.n_x as f64 * g.cell_size, g.n_y as f64 * g.cell_size);
            let margin = 1.0f64.min(w / 4.0);
            let y = g.origin[1] + h / 2.0;
            [g.origin[0] + margin, y, g.origin[0] + w - margin, y]
        });
        let heading = (y1 - y0).atan2(x1 - x0);
        let duration = self.revolutions.max(1) as f64 / 10.0;
        vec![
            Waypoint { t: 0.0, x: x0, y: y0, heading },
            Waypoint { t: duration, x: x1, y: y1, heading },
        ]
    }

    /// Beams with seeded random responses, optionally overridden by a
    /// profile CSV.
    pub fn beams(&self, profile: Option<&Path>) -> Result<Vec<LaserModel>> {
        let mut beams = rig(&self.rig)?;
        randomize_responses(&mut beams, self.offset_range, self.gamma_range, self.sigma, self.seed ^ RESPONSE_STREAM)?;
        if let Some(p) = profile {
            io::apply_profile(p, &mut beams)?;
        }
        Ok(beams)
    }

    pub fn run(&self, profile: Option<&Path>) -> Result<Simulated> {
        let scene = make_scene(self.grid, &self.recipe)?;
        let beams = self.beams(profile)?;
        let trajectory = self.trajectory();
        let cfg = ScanConfig {
            trajectory: trajectory.clone(),
            revolutions_per_second: 10.0,
            beams: beams.clone(),
            points_per_revolution_per_beam: self.points_per_revolution_per_beam,
            seed: self.seed,
        };
        let out = scan(&scene, &cfg)?;
        log::info!(
            "simulated {} measurements ({} off-grid)",
            out.measurements.len(),
            out.dropped
        );
        Ok(Simulated {
            scene,
            beams,
            trajectory,
            measurements: out.measurements,
            dropped: out.dropped,
        })
    }
}
