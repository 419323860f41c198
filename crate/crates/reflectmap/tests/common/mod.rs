#![allow(dead_code)]

use std::path::{Path, PathBuf};

use reflectmap::config::PipelineConfig;
use reflectmap::core::segment::MarkMask;
use reflectmap::core::simulate::RigConfig;
use reflectmap::core::GridSpec;
use reflectmap::io;
use reflectmap::scenario::Scenario;

/// A 6 m square lanes patch surveyed by an 8-beam rig.
pub fn small_scenario(seed: u64) -> Scenario {
    Scenario {
        grid: GridSpec::new(60, 60, 0.1, [0.0, 0.0]).unwrap(),
        rig: RigConfig {
            sensors: 2,
            beams_per_sensor: 4,
            min_radius: 0.6,
            max_radius: 2.2,
            ..RigConfig::default()
        },
        revolutions: 10,
        points_per_revolution_per_beam: 300,
        seed,
        ..Scenario::default()
    }
}

pub struct Inputs {
    pub measurements: PathBuf,
    pub truth: PathBuf,
    pub features: PathBuf,
}

/// Simulates `scenario` into `dir` and returns the written inputs.
pub fn write_inputs(dir: &Path, scenario: &Scenario) -> Inputs {
    let sim = scenario.run(None).unwrap();
    let inputs = Inputs {
        measurements: dir.join("measurements.csv"),
        truth: dir.join("truth_in.pgm"),
        features: dir.join("features_in.pgm"),
    };
    io::write_measurements(&inputs.measurements, &sim.measurements).unwrap();
    io::write_map(&inputs.truth, &sim.scene.truth).unwrap();
    let marks = MarkMask::full(*sim.scene.truth.spec(), sim.scene.feature_mask.clone()).unwrap();
    io::write_marks(&inputs.features, &marks).unwrap();
    inputs
}

pub fn small_config(inputs: &Inputs, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.apply_text(
        "grid.nx = 60\ngrid.ny = 60\nlocalize.window = dx=0.3,dy=0.3,h=0.01\nlocalize.steps = dx=0.1,dy=0.1,h=0.01\n",
    )
    .unwrap();
    cfg.measurements = Some(inputs.measurements.clone());
    cfg.truth = Some(inputs.truth.clone());
    cfg.features = Some(inputs.features.clone());
    cfg.out = out.to_path_buf();
    cfg
}

/// Relative paths and contents of every PGM, CSV and RGRD file under `dir`.
pub fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "csv" | "rgrd")) {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}
