use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reflectmap::config::{parse_descent, parse_triple, Mode, PipelineConfig};
use reflectmap::core::fusion::{fuse, perspective_gradients, select_weights};
use reflectmap::core::gradients::{gradient, gradient_magnitude};
use reflectmap::core::localize::SearchWindow;
use reflectmap::core::perspectives::{build_perspectives, naive_mean_map, Binning, Measurement};
use reflectmap::core::reconstruct::{boundary_set, poisson_reconstruct};
use reflectmap::core::segment::{evaluate, extract_markings, ThresholdMethod};
use reflectmap::core::simulate::{Recipe, RigConfig};
use reflectmap::core::{CellMap, FusionConfig, GridSpec, OccupancySet, PerspectiveKey, PerspectiveSet, ReconstructionConfig, WeightVector};
use reflectmap::scenario::Scenario;
use reflectmap::{figures, io, localize, pipeline, Error, Result};

/// Ground reflectivity maps from multi-perspective laser scans.
#[derive(Parser)]
#[command(name = "reflectmap", version)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a survey of a synthetic scene.
    Simulate(SimulateArgs),
    /// Bin measurements into per-perspective maps.
    Perspectives(PerspectivesArgs),
    /// Fuse perspective gradients into one field.
    Fuse(FuseArgs),
    /// Reconstruct a map from a fused gradient field.
    Reconstruct(ReconstructArgs),
    /// Register a local map against a prior map.
    Localize(LocalizeArgs),
    /// Extract road markings by thresholding.
    Segment(SegmentArgs),
    /// Score a marking mask against ground truth.
    Eval(EvalArgs),
    /// Run every stage from a measurement file.
    Pipeline(PipelineArgs),
    /// Render PNG figures from a pipeline run directory.
    Figures(FiguresArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Cells along x.
    #[arg(long, default_value_t = 400)]
    nx: usize,
    /// Cells along y.
    #[arg(long, default_value_t = 400)]
    ny: usize,
    /// Cell side in meters.
    #[arg(long, default_value_t = 0.1)]
    cell_size: f64,
    /// World coordinates of the grid corner, `x,y`.
    #[arg(long, default_value = "0,0")]
    origin: String,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        let (x, y) = self
            .origin
            .split_once(',')
            .ok_or_else(|| Error::Config("--origin expects x,y".into()))?;
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number {s:?}")));
        Ok(GridSpec::new(self.nx, self.ny, self.cell_size, [num(x)?, num(y)?])?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "lanes")]
    recipe: String,
    /// Measurement CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth map to write (plus its `.mask.pgm`).
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Ground-truth marking mask to write.
    #[arg(long)]
    features_out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Total beams, split evenly over two sensors.
    #[arg(long, default_value_t = 64)]
    beams: usize,
    /// Scanner revolutions at 10 per second.
    #[arg(long, default_value_t = 20)]
    revs: usize,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    #[arg(long, default_value_t = 3.0)]
    min_radius: f64,
    #[arg(long, default_value_t = 14.0)]
    max_radius: f64,
    /// Per-beam response overrides (beam,gain,offset,gamma,sigma).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Writes the per-beam responses actually used.
    #[arg(long)]
    profile_out: Option<PathBuf>,
    /// Response noise standard deviation.
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Half-width of the uniform per-beam offset draw.
    #[arg(long, default_value_t = 15.0)]
    offset: f64,
    /// Straight drive `x0,y0,x1,y1` in meters (default: along the center line).
    #[arg(long)]
    drive: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct PerspectivesArgs {
    #[arg(long)]
    measurements: PathBuf,
    /// Directory receiving one map per perspective.
    #[arg(long)]
    out_dir: PathBuf,
    /// Naive per-cell mean map to write.
    #[arg(long)]
    naive_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    incidence_bin: f64,
    #[arg(long, default_value_t = 2.0)]
    range_bin: f64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct FuseArgs {
    /// Directory of perspective maps named `b<beam>_i<inc>_r<range>.pgm`.
    #[arg(long)]
    perspectives: PathBuf,
    /// Gradient file to write.
    #[arg(long)]
    out: PathBuf,
    /// Use equal weights instead of sparse selection.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Soft-threshold level; defaults to gamma times lambda.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    denoise: bool,
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    gradient: PathBuf,
    /// Reference perspective map supplying the pinned cells.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Occupancy mask of the reconstruction domain (default: reference
    /// occupancy plus every cell touched by a valid gradient component).
    #[arg(long)]
    domain: Option<PathBuf>,
    /// `energy` or `least-squares`.
    #[arg(long, default_value = "energy")]
    descent: String,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 256)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    rel_tol: f64,
    /// Histogram bin width for the boundary set.
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// Convergence log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    prior: PathBuf,
    #[arg(long)]
    local: PathBuf,
    #[arg(long, default_value = "dx=1.0,dy=1.0,h=0.03")]
    window: String,
    #[arg(long, default_value = "dx=0.1,dy=0.1,h=0.005")]
    steps: String,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Register the inputs as given instead of their gradient magnitudes.
    #[arg(long)]
    as_is: bool,
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    map: PathBuf,
    /// `otsu` or `fixed`.
    #[arg(long, default_value = "otsu")]
    method: String,
    /// Threshold for the fixed method.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    measurements: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// naive, uniform, select or select+denoise.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct FiguresArgs {
    /// Pipeline run directory.
    dir: PathBuf,
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let sensors = if a.beams % 2 == 0 { 2 } else { 1 };
    let drive = a
        .drive
        .as_deref()
        .map(|s| {
            let v: Vec<f64> = s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad --drive {s:?}")))?;
            <[f64; 4]>::try_from(v).map_err(|_| Error::Config("--drive expects x0,y0,x1,y1".into()))
        })
        .transpose()?;
    let scenario = Scenario {
        grid: a.grid.spec()?,
        recipe: Recipe::named(&a.recipe)?,
        rig: RigConfig {
            sensors,
            beams_per_sensor: a.beams / sensors,
            min_radius: a.min_radius,
            max_radius: a.max_radius,
            ..RigConfig::default()
        },
        offset_range: (-a.offset, a.offset),
        sigma: a.sigma,
        revolutions: a.revs,
        points_per_revolution_per_beam: a.points,
        drive,
        seed: a.seed,
        ..Scenario::default()
    };
    let sim = scenario.run(a.profile.as_deref())?;
    io::write_measurements(&a.out, &sim.measurements)?;
    if let Some(p) = &a.truth_out {
        io::write_map(p, &sim.scene.truth)?;
    }
    if let Some(p) = &a.features_out {
        let marks = reflectmap::core::segment::MarkMask::full(*sim.scene.truth.spec(), sim.scene.feature_mask.clone())?;
        io::write_marks(p, &marks)?;
    }
    if let Some(p) = &a.profile_out {
        io::write_profile(p, &sim.beams)?;
    }
    println!("{} measurements written to {}", sim.measurements.len(), a.out.display());
    Ok(())
}

fn perspectives(a: &PerspectivesArgs) -> Result<()> {
    let spec = a.grid.spec()?;
    let binning = Binning::new(a.incidence_bin, a.range_bin)?;
    let ms: Vec<Measurement> = io::read_measurements(&a.measurements)?
        .iter()
        .map(|m| binning.bin(m))
        .collect::<std::result::Result<_, _>>()?;
    let set = build_perspectives(ms.iter().copied(), spec);
    for (key, map) in set.maps() {
        io::write_map(&a.out_dir.join(format!("{key}.pgm")), map)?;
    }
    if let Some(p) = &a.naive_out {
        io::write_map(p, &naive_mean_map(ms.iter().copied(), spec))?;
    }
    println!("{} perspectives, {} measurements off the grid", set.len(), set.dropped());
    Ok(())
}

fn parse_key(name: &str) -> Option<PerspectiveKey> {
    let rest = name.strip_prefix('b')?;
    let (b, rest) = rest.split_once("_i")?;
    let (i, r) = rest.split_once("_r")?;
    Some(PerspectiveKey::new(b.parse().ok()?, i.parse().ok()?, r.parse().ok()?))
}

fn read_perspective_dir(dir: &Path) -> Result<PerspectiveSet> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut maps = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(stem) = name.strip_suffix(".pgm").filter(|s| !s.ends_with(".mask")) else {
            continue;
        };
        if let Some(key) = parse_key(stem) {
            maps.push((key, io::read_map(&path)?));
        }
    }
    let spec = *maps
        .first()
        .ok_or_else(|| Error::format(dir, "no perspective maps found"))?
        .1
        .spec();
    Ok(PerspectiveSet::from_maps(spec, maps)?)
}

fn fuse_cmd(a: &FuseArgs) -> Result<()> {
    let set = read_perspective_dir(&a.perspectives)?;
    let defaults = FusionConfig::default();
    let cfg = FusionConfig {
        lambda: a.lambda.unwrap_or(defaults.lambda),
        gamma: a.gamma.unwrap_or(defaults.gamma),
        tau: a.tau,
        max_iters: a.max_iters.unwrap_or(defaults.max_iters),
        denoise: a.denoise,
        ..defaults
    };
    cfg.validate()?;
    let grads = perspective_gradients(&set);
    let weights = if a.uniform {
        WeightVector::uniform(grads.keys())
    } else {
        select_weights(&grads, &cfg)?.weights
    };
    let fused = fuse(&grads, &weights, &cfg)?;
    io::write_gradient(&a.out, &fused)?;
    if let Some(p) = &a.weights_out {
        io::write_weights(p, &weights)?;
    }
    println!("{} perspectives, {} nonzero weights", set.len(), weights.nonzero_count());
    Ok(())
}

fn reconstruct_cmd(a: &ReconstructArgs) -> Result<()> {
    let g = io::read_gradient(&a.gradient)?;
    let reference = io::read_map(&a.reference)?;
    if reference.spec() != g.spec() {
        return Err(reflectmap::core::Error::GridMismatch.into());
    }
    let key = a
        .reference
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(parse_key)
        .unwrap_or(PerspectiveKey::new(0, 0, 0));
    let bc = boundary_set(key, &reference, a.bin_width)?;
    let spec = *g.spec();
    let omega = match &a.domain {
        Some(p) => OccupancySet::from_mask(&io::read_mask(p)?.1),
        None => {
            let mut mask = reference.occupied_mask().to_vec();
            for n in 0..spec.len() {
                if g.valid_x()[n] {
                    mask[n] = true;
                    mask[n + spec.n_y] = true;
                }
                if g.valid_y()[n] {
                    mask[n] = true;
                    mask[n + 1] = true;
                }
            }
            OccupancySet::from_mask(&mask)
        }
    };
    let descent = parse_descent(&a.descent)?;
    let cfg = ReconstructionConfig {
        descent,
        gamma: a.gamma.unwrap_or(descent.default_gamma()),
        max_iters: a.max_iters,
        rel_tol: a.rel_tol,
        ..ReconstructionConfig::default()
    };
    let rec = poisson_reconstruct(&g, &bc, &omega, &cfg)?;
    io::write_map(&a.out, &rec.map)?;
    if let Some(p) = &a.log {
        io::write_convergence(p, &rec.log)?;
    }
    println!(
        "{} iterations, converged {}, objective {:.6e}, {} cells clamped",
        rec.iterations(),
        rec.converged,
        rec.final_objective(),
        rec.clamped
    );
    Ok(())
}

fn localize_cmd(a: &LocalizeArgs, jobs: Option<usize>) -> Result<()> {
    let [dx_range, dy_range, heading_range] = parse_triple(&a.window)?;
    let [dx_step, dy_step, heading_step] = parse_triple(&a.steps)?;
    let window = SearchWindow { dx_range, dy_range, heading_range, dx_step, dy_step, heading_step };
    let load = |p: &Path| -> Result<CellMap> {
        let m = io::read_map(p)?;
        Ok(if a.as_is { m } else { gradient_magnitude(&gradient(&m)) })
    };
    let (prior, local) = (load(&a.prior)?, load(&a.local)?);
    let (reg, scores) = localize::with_jobs(jobs, || localize::register(&prior, &local, &window, a.bins))??;
    if let Some(p) = &a.scores_out {
        io::write_scores(p, &scores)?;
    }
    println!(
        "dx={} dy={} h={} score={:.6}{}",
        reg.pose.dx,
        reg.pose.dy,
        reg.pose.heading,
        reg.score,
        if reg.low_confidence { " (low confidence)" } else { "" }
    );
    Ok(())
}

fn segment_cmd(a: &SegmentArgs) -> Result<()> {
    let map = io::read_map(&a.map)?;
    let method = match (a.method.as_str(), a.threshold) {
        ("otsu", _) => ThresholdMethod::Otsu,
        ("fixed", Some(t)) => ThresholdMethod::Fixed(t),
        ("fixed", None) => return Err(Error::Config("--method fixed needs --threshold".into())),
        (m, _) => return Err(Error::Config(format!("unknown method {m:?} (otsu, fixed)"))),
    };
    let marks = extract_markings(&map, method)?;
    io::write_marks(&a.out, &marks)?;
    println!("{} cells marked", marks.marked_count());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let r = evaluate(&io::read_marks(&a.mask)?, &io::read_marks(&a.truth)?)?;
    io::write_report(&a.report, &r)?;
    println!(
        "completeness={:.4} correctness={:.4} f={:.4}",
        r.completeness, r.correctness, r.f_score
    );
    Ok(())
}

fn pipeline_cmd(a: &PipelineArgs, jobs: Option<usize>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.measurements {
        cfg.measurements = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.out = p.clone();
    }
    if let Some(p) = &a.truth {
        cfg.truth = Some(p.clone());
    }
    if let Some(p) = &a.features {
        cfg.features = Some(p.clone());
    }
    if let Some(l) = a.lambda {
        cfg.fusion.lambda = l;
    }
    if let Some(t) = a.tau {
        cfg.fusion.tau = Some(t);
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let summary = localize::with_jobs(jobs, || pipeline::run_pipeline(&cfg))??;
    if let Some(n) = summary.nonzero_weights {
        println!("nonzero weights: {n}");
    }
    if let Some(r) = &summary.reconstruction {
        println!("reconstruction: {} iterations, converged {}", r.iterations(), r.converged);
    }
    if let Some(r) = &summary.registration {
        println!("pose: dx={} dy={} h={} score={:.6}", r.pose.dx, r.pose.dy, r.pose.heading, r.score);
    }
    println!("artifacts in {}", summary.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Perspectives(a) => perspectives(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Localize(a) => localize_cmd(a, cli.jobs),
        Command::Segment(a) => segment_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a, cli.jobs),
        Command::Figures(a) => {
            for p in figures::emit_figures(&a.dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REFLECTMAP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
