//! End-to-end run: measurements to perspectives, fusion, reconstruction,
//! localization and evaluation, with every artifact written to one
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use reflectmap_core::fusion::{fuse, perspective_gradients, select_weights};
use reflectmap_core::gradients::{gradient, gradient_magnitude};
use reflectmap_core::localize::{local_gradient_magnitude, Pose, Registration};
use reflectmap_core::perspectives::{build_perspectives, naive_mean_map, union_occupancy, Measurement};
use reflectmap_core::reconstruct::{boundary_set, choose_reference, poisson_reconstruct, Reconstruction};
use reflectmap_core::segment::{evaluate, extract_markings, psnr, rmse, ThresholdMethod};
use reflectmap_core::{CellMap, GridSpec, PerspectiveSet, WeightVector};

use crate::config::{Mode, PipelineConfig};
use crate::error::{Error, Result, StageExt};
use crate::{io, localize};

pub const MANIFEST: &str = "manifest.txt";
pub const NAIVE: &str = "naive.pgm";
pub const MAP: &str = "map.pgm";
pub const TRUTH: &str = "truth.pgm";
pub const FUSED: &str = "fused.rgrd";
pub const WEIGHTS: &str = "weights.csv";
pub const CONVERGENCE: &str = "convergence.csv";
pub const SCORES: &str = "scores.csv";
pub const POSE: &str = "pose.csv";
pub const MARKS: &str = "marks.pgm";
pub const REPORT: &str = "report.csv";
pub const EVALUATION: &str = "evaluation.csv";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub nonzero_weights: Option<usize>,
    pub reconstruction: Option<Reconstruction>,
    pub registration: Option<Registration>,
    /// Injected offset the registration should recover.
    pub expected_pose: Option<Pose>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    written: Vec<PathBuf>,
    results: Vec<(String, String)>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.results.push((format!("result.{key}"), value.to_string()));
    }

    fn track(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.written.extend(paths);
    }

    fn manifest_text(&self) -> String {
        let mut s = self.cfg.to_text();
        for (k, v) in &self.results {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    fn write_manifest(&mut self) -> Result<()> {
        let path = self.path(MANIFEST);
        fs::write(&path, self.manifest_text()).map_err(|e| Error::io(&path, e))?;
        self.track([path]);
        Ok(())
    }

    /// Renames everything written so far to `<name>.partial`.
    fn quarantine(&mut self) {
        let _ = self.write_manifest();
        for p in &self.written {
            let mut target = p.as_os_str().to_owned();
            target.push(".partial");
            if let Err(e) = fs::rename(p, &target) {
                log::warn!("could not mark {} as partial: {e}", p.display());
            }
        }
    }
}

fn timed<T>(run: &mut Run, stage: &'static str, f: impl FnOnce(&mut Run) -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f(run).stage(stage)?;
    let secs = start.elapsed().as_secs_f64();
    log::info!("{stage}: {secs:.3} s");
    run.note(&format!("time.{stage}_s"), format!("{secs:.3}"));
    Ok(out)
}

/// Executes the configured run. On failure the error names the stage and
/// every artifact already written gets a `.partial` suffix.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let measurements = cfg
        .measurements
        .clone()
        .ok_or_else(|| Error::Config("no measurement file given".into()))?;
    if !measurements.exists() {
        return Err(Error::MissingInput(measurements));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let mut run = Run {
        cfg,
        written: Vec::new(),
        results: Vec::new(),
    };
    match stages(&mut run, &measurements) {
        Ok(summary) => {
            run.write_manifest()?;
            Ok(RunSummary {
                artifacts: run.written,
                ..summary
            })
        }
        Err(e) => {
            run.quarantine();
            Err(e)
        }
    }
}

fn stages(run: &mut Run, measurements: &Path) -> Result<RunSummary> {
    let cfg = run.cfg;
    let spec = cfg.grid;
    let ms: Vec<Measurement> = timed(run, "load", |_| {
        let raw = io::read_measurements(measurements)?;
        raw.iter()
            .map(|m| cfg.binning.bin(m).map_err(Error::from))
            .collect()
    })?;
    run.note("measurements", ms.len());

    let (set, naive) = timed(run, "perspectives", |run| {
        let set = build_perspectives(ms.iter().copied(), spec);
        let naive = naive_mean_map(ms.iter().copied(), spec);
        if set.is_empty() {
            return Err(reflectmap_core::Error::Empty("no measurement falls inside the grid").into());
        }
        let paths = io::write_map(&run.path(NAIVE), &naive)?;
        run.track(paths);
        if cfg.write_perspectives {
            for (key, map) in set.maps() {
                let paths = io::write_map(&run.path(&format!("perspectives/{key}.pgm")), map)?;
                run.track(paths);
            }
        }
        Ok((set, naive))
    })?;
    run.note("perspectives", set.len());
    run.note("dropped_measurements", set.dropped());
    drop(ms);

    let mut summary = RunSummary {
        out: cfg.out.clone(),
        artifacts: Vec::new(),
        nonzero_weights: None,
        reconstruction: None,
        registration: None,
        expected_pose: None,
    };

    let map = if cfg.mode == Mode::Naive {
        let paths = io::write_map(&run.path(MAP), &naive)?;
        run.track(paths);
        naive.clone()
    } else {
        let fused = timed(run, "fusion", |run| {
            let fcfg = cfg.fusion_config();
            let grads = perspective_gradients(&set);
            let weights = if cfg.mode == Mode::Uniform {
                WeightVector::uniform(grads.keys())
            } else {
                let sel = select_weights(&grads, &fcfg)?;
                run.note("fusion.iterations", sel.iterations);
                run.note("fusion.objective", sel.objective);
                sel.weights
            };
            run.note("nonzero_weights", weights.nonzero_count());
            summary.nonzero_weights = Some(weights.nonzero_count());
            io::write_weights(&run.path(WEIGHTS), &weights)?;
            run.track([run.path(WEIGHTS)]);
            let fused = fuse(&grads, &weights, &fcfg)?;
            let paths = io::write_gradient(&run.path(FUSED), &fused)?;
            run.track(paths);
            Ok(fused)
        })?;

        let rec = timed(run, "reconstruct", |run| {
            let key = choose_reference(&set)?;
            let reference = &set.get(&key).expect("chosen key is in the set").map;
            let bc = boundary_set(key, reference, cfg.boundary_bin_width)?;
            run.note("reference", key);
            run.note("boundary_cells", bc.boundary.len());
            let rec = poisson_reconstruct(&fused, &bc, &union_occupancy(&set), &cfg.reconstruction_config())?;
            run.note("iterations", rec.iterations());
            run.note("converged", rec.converged);
            run.note("restarts", rec.restarts);
            run.note("final_objective", rec.final_objective());
            run.note("clamped_cells", rec.clamped);
            run.note("missing_gradient_cells", rec.missing_gradient_cells);
            run.note("floating_cells", rec.floating_cells);
            io::write_convergence(&run.path(CONVERGENCE), &rec.log)?;
            run.track([run.path(CONVERGENCE)]);
            let paths = io::write_map(&run.path(MAP), &rec.map)?;
            run.track(paths);
            Ok(rec)
        })?;
        let map = rec.map.clone();
        summary.reconstruction = Some(rec);
        map
    };

    if cfg.localize.enabled {
        let (registration, expected) = timed(run, "localize", |run| localize_stage(run, &set, &map))?;
        summary.registration = Some(registration);
        summary.expected_pose = Some(expected);
    }

    if let Some(truth) = &cfg.truth {
        timed(run, "evaluate", |run| evaluate_stage(run, truth, &map, &naive))?;
    }
    Ok(summary)
}

/// Registers a crop of the scan's own gradient magnitude, displaced by the
/// configured offset, against the gradient magnitude of the output map.
fn localize_stage(run: &mut Run, set: &PerspectiveSet, map: &CellMap) -> Result<(Registration, Pose)> {
    let lc = &run.cfg.localize;
    let spec = *map.spec();
    let prior = gradient_magnitude(&gradient(map));
    let magnitude = local_gradient_magnitude(set)?;
    let (i, j) = (
        (lc.offset.dx / spec.cell_size).round() as i64,
        (lc.offset.dy / spec.cell_size).round() as i64,
    );
    let (n_c, n_r) = (
        ((spec.n_x as f64 * lc.crop).round() as usize).max(2),
        ((spec.n_y as f64 * lc.crop).round() as usize).max(2),
    );
    let (c0, r0) = ((spec.n_x - n_c) / 2, (spec.n_y - n_r) / 2);
    let (cs, rs) = (c0 as i64 + i, r0 as i64 + j);
    if cs < 0 || rs < 0 || cs as usize + n_c > spec.n_x || rs as usize + n_r > spec.n_y {
        return Err(Error::Config("localize.offset moves the crop off the grid".into()));
    }
    let local_spec = GridSpec::new(
        n_c,
        n_r,
        spec.cell_size,
        [
            spec.origin[0] + c0 as f64 * spec.cell_size,
            spec.origin[1] + r0 as f64 * spec.cell_size,
        ],
    )?;
    let mut local = CellMap::empty(local_spec);
    for m in 0..local_spec.len() {
        let (r, c) = local_spec.row_col(m);
        if let Some(v) = magnitude.get(spec.linear_index(rs as usize + r, cs as usize + c)?) {
            local.set(m, v);
        }
    }
    let (reg, scores) = localize::register(&prior, &local, &lc.window, lc.bins)?;
    let expected = Pose::new(i as f64 * spec.cell_size, j as f64 * spec.cell_size, 0.0);
    io::write_scores(&run.path(SCORES), &scores)?;
    run.track([run.path(SCORES)]);
    let pose_path = run.path(POSE);
    let mut w = csv::Writer::from_path(&pose_path).map_err(|e| Error::csv(&pose_path, e))?;
    w.write_record(["dx", "dy", "heading", "score", "low_confidence", "expected_dx", "expected_dy"])
        .and_then(|_| {
            w.write_record([
                reg.pose.dx.to_string(),
                reg.pose.dy.to_string(),
                reg.pose.heading.to_string(),
                reg.score.to_string(),
                reg.low_confidence.to_string(),
                expected.dx.to_string(),
                expected.dy.to_string(),
            ])
        })
        .map_err(|e| Error::csv(&pose_path, e))?;
    w.flush().map_err(|e| Error::io(&pose_path, e))?;
    run.track([pose_path]);
    run.note("localize.pose", format!("dx={},dy={},h={}", reg.pose.dx, reg.pose.dy, reg.pose.heading));
    run.note("localize.score", reg.score);
    run.note("localize.low_confidence", reg.low_confidence);
    Ok((reg, expected))
}

fn evaluate_stage(run: &mut Run, truth: &Path, map: &CellMap, naive: &CellMap) -> Result<()> {
    let truth_map = io::read_map(truth)?;
    let paths = io::write_map(&run.path(TRUTH), &truth_map)?;
    run.track(paths);
    let path = run.path(EVALUATION);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["map", "rmse", "psnr"]).map_err(|e| Error::csv(&path, e))?;
    for (label, m) in [("output", map), ("naive", naive)] {
        let (e, p) = (rmse(m, &truth_map)?, psnr(m, &truth_map, 255.0)?);
        run.note(&format!("rmse.{label}"), e);
        w.write_record([label.to_string(), e.to_string(), p.to_string()])
            .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    run.track([path]);

    if let Some(features) = &run.cfg.features {
        let truth_marks = io::read_marks(features)?;
        let marks = extract_markings(map, ThresholdMethod::Otsu)?;
        let report = evaluate(&marks, &truth_marks)?;
        let paths = io::write_marks(&run.path(MARKS), &marks)?;
        run.track(paths);
        io::write_report(&run.path(REPORT), &report)?;
        run.track([run.path(REPORT)]);
        run.note("f_score.output", report.f_score);
        let naive_marks = extract_markings(naive, ThresholdMethod::Otsu)?;
        run.note("f_score.naive", evaluate(&naive_marks, &truth_marks)?.f_score);
    }
    Ok(())
}
