//! Plain-text `key = value` configuration. A run manifest uses the same
//! syntax, so feeding a manifest back reproduces the run; `result.*` keys
//! are informational and ignored on input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use reflectmap_core::localize::{Pose, SearchWindow};
use reflectmap_core::perspectives::Binning;
use reflectmap_core::{Descent, FusionConfig, GridSpec, ReconstructionConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Naive,
    Uniform,
    Select,
    SelectDenoise,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Naive, Mode::Uniform, Mode::Select, Mode::SelectDenoise];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::Uniform => "uniform",
            Mode::Select => "select",
            Mode::SelectDenoise => "select+denoise",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (naive, uniform, select, select+denoise)")))
    }
}

pub fn descent_name(d: Descent) -> &'static str {
    match d {
        Descent::LeastSquares => "least-squares",
        Descent::Energy => "energy",
    }
}

pub fn parse_descent(s: &str) -> Result<Descent> {
    match s {
        "least-squares" => Ok(Descent::LeastSquares),
        "energy" => Ok(Descent::Energy),
        _ => Err(Error::Config(format!("unknown descent {s:?} (energy, least-squares)"))),
    }
}

/// Parses `dx=..,dy=..,h=..` into its three numbers.
pub fn parse_triple(s: &str) -> Result<[f64; 3]> {
    let mut out = [None; 3];
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected dx=..,dy=..,h=.. in {s:?}")))?;
        let slot = match k.trim() {
            "dx" => 0,
            "dy" => 1,
            "h" => 2,
            other => return Err(Error::Config(format!("unknown component {other:?} in {s:?}"))),
        };
        out[slot] = Some(parse_num(v.trim())?);
    }
    match out {
        [Some(a), Some(b), Some(c)] => Ok([a, b, c]),
        _ => Err(Error::Config(format!("{s:?} needs dx, dy and h"))),
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse {v:?}")))
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got {v:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeConfig {
    pub enabled: bool,
    pub window: SearchWindow,
    pub bins: usize,
    /// Translation injected into the local crop, rounded to whole cells.
    pub offset: Pose,
    /// Side of the local crop as a fraction of the patch.
    pub crop: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: SearchWindow {
                dx_range: 0.5,
                dy_range: 0.5,
                heading_range: 0.02,
                dx_step: 0.1,
                dy_step: 0.1,
                heading_step: 0.005,
            },
            bins: reflectmap_core::localize::DEFAULT_BINS,
            offset: Pose::identity(),
            crop: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub grid: GridSpec,
    pub binning: Binning,
    pub fusion: FusionConfig,
    pub reconstruction: ReconstructionConfig,
    /// Explicit reconstruction step; `None` uses the descent's default.
    pub reconstruction_gamma: Option<f64>,
    pub boundary_bin_width: f64,
    pub localize: LocalizeConfig,
    pub mode: Mode,
    pub seed: u64,
    pub measurements: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: PathBuf,
    pub write_perspectives: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::new(400, 400, 0.1, [0.0, 0.0]).expect("valid default grid"),
            binning: Binning::default(),
            fusion: FusionConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            reconstruction_gamma: None,
            boundary_bin_width: 1.0,
            localize: LocalizeConfig::default(),
            mode: Mode::Select,
            seed: 42,
            measurements: None,
            truth: None,
            features: None,
            out: PathBuf::from("run"),
            write_perspectives: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let path = || Some(PathBuf::from(v)).filter(|p| !p.as_os_str().is_empty());
        match key {
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse_num(v)?,
            "measurements" => self.measurements = path(),
            "truth" => self.truth = path(),
            "features" => self.features = path(),
            "out" => self.out = PathBuf::from(v),
            "perspectives.write" => self.write_perspectives = parse_bool(v)?,
            "grid.nx" => self.grid.n_x = parse_num(v)?,
            "grid.ny" => self.grid.n_y = parse_num(v)?,
            "grid.cell_size" => self.grid.cell_size = parse_num(v)?,
            "grid.origin" => {
                let (x, y) = v
                    .split_once(',')
                    .ok_or_else(|| Error::Config("grid.origin expects x,y".into()))?;
                self.grid.origin = [parse_num(x.trim())?, parse_num(y.trim())?];
            }
            "binning.incidence_deg" => self.binning.incidence_deg = parse_num(v)?,
            "binning.range_m" => self.binning.range_m = parse_num(v)?,
            "fusion.lambda" => self.fusion.lambda = parse_num(v)?,
            "fusion.gamma" => self.fusion.gamma = parse_num(v)?,
            "fusion.tau" => {
                self.fusion.tau = if v == "coupled" { None } else { Some(parse_num(v)?) }
            }
            "fusion.max_iters" => self.fusion.max_iters = parse_num(v)?,
            "fusion.rel_tol" => self.fusion.rel_tol = parse_num(v)?,
            "fusion.denoise_tau" => self.fusion.denoise_tau = parse_num(v)?,
            "fusion.denoise_gamma" => self.fusion.denoise_gamma = parse_num(v)?,
            "fusion.denoise_max_iters" => self.fusion.denoise_max_iters = parse_num(v)?,
            "reconstruct.descent" => self.reconstruction.descent = parse_descent(v)?,
            "reconstruct.gamma" => {
                self.reconstruction_gamma = if v == "auto" { None } else { Some(parse_num(v)?) }
            }
            "reconstruct.max_iters" => self.reconstruction.max_iters = parse_num(v)?,
            "reconstruct.rel_tol" => self.reconstruction.rel_tol = parse_num(v)?,
            "reconstruct.clamp" => {
                self.reconstruction.clamp = parse_bool(v)?.then_some((0.0, 255.0))
            }
            "reconstruct.restart" => self.reconstruction.restart = parse_bool(v)?,
            "reconstruct.bin_width" => self.boundary_bin_width = parse_num(v)?,
            "localize.enabled" => self.localize.enabled = parse_bool(v)?,
            "localize.window" => {
                let [dx, dy, h] = parse_triple(v)?;
                let w = &mut self.localize.window;
                (w.dx_range, w.dy_range, w.heading_range) = (dx, dy, h);
            }
            "localize.steps" => {
                let [dx, dy, h] = parse_triple(v)?;
                let w = &mut self.localize.window;
                (w.dx_step, w.dy_step, w.heading_step) = (dx, dy, h);
            }
            "localize.bins" => self.localize.bins = parse_num(v)?,
            "localize.offset" => {
                let [dx, dy, h] = parse_triple(v)?;
                self.localize.offset = Pose::new(dx, dy, h);
            }
            "localize.crop" => self.localize.crop = parse_num(v)?,
            k if k.starts_with("result.") => {}
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Reconstruction settings with the step resolved against the descent.
    pub fn reconstruction_config(&self) -> ReconstructionConfig {
        let mut r = self.reconstruction;
        r.gamma = self
            .reconstruction_gamma
            .unwrap_or_else(|| r.descent.default_gamma());
        r
    }

    /// Fusion settings with denoising switched by the mode.
    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            denoise: self.mode == Mode::SelectDenoise,
            ..self.fusion
        }
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.grid.n_x, self.grid.n_y, self.grid.cell_size, self.grid.origin)?;
        Binning::new(self.binning.incidence_deg, self.binning.range_m)?;
        self.fusion_config().validate()?;
        self.reconstruction_config().validate()?;
        if !(self.boundary_bin_width > 0.0 && self.boundary_bin_width.is_finite()) {
            return Err(Error::Config("reconstruct.bin_width must be positive".into()));
        }
        if self.localize.enabled {
            self.localize.window.validate()?;
            if self.localize.bins < 2 {
                return Err(Error::Config("localize.bins must be at least 2".into()));
            }
            if !(self.localize.crop > 0.0 && self.localize.crop <= 1.0) {
                return Err(Error::Config("localize.crop must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` lines covering every setting.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let triple = |a: f64, b: f64, c: f64| format!("dx={a},dy={b},h={c}");
        let f = &self.fusion;
        let r = &self.reconstruction;
        let w = &self.localize.window;
        let o = &self.localize.offset;
        let entries: Vec<(&str, String)> = vec![
            ("mode", self.mode.as_str().into()),
            ("seed", self.seed.to_string()),
            ("measurements", opt(&self.measurements)),
            ("truth", opt(&self.truth)),
            ("features", opt(&self.features)),
            ("out", self.out.display().to_string()),
            ("perspectives.write", self.write_perspectives.to_string()),
            ("grid.nx", self.grid.n_x.to_string()),
            ("grid.ny", self.grid.n_y.to_string()),
            ("grid.cell_size", self.grid.cell_size.to_string()),
            ("grid.origin", format!("{},{}", self.grid.origin[0], self.grid.origin[1])),
            ("binning.incidence_deg", self.binning.incidence_deg.to_string()),
            ("binning.range_m", self.binning.range_m.to_string()),
            ("fusion.lambda", f.lambda.to_string()),
            ("fusion.gamma", f.gamma.to_string()),
            ("fusion.tau", f.tau.map_or("coupled".into(), |t| t.to_string())),
            ("fusion.max_iters", f.max_iters.to_string()),
            ("fusion.rel_tol", f.rel_tol.to_string()),
            ("fusion.denoise_tau", f.denoise_tau.to_string()),
            ("fusion.denoise_gamma", f.denoise_gamma.to_string()),
            ("fusion.denoise_max_iters", f.denoise_max_iters.to_string()),
            ("reconstruct.descent", descent_name(r.descent).into()),
            ("reconstruct.gamma", self.reconstruction_gamma.map_or("auto".into(), |g| g.to_string())),
            ("reconstruct.max_iters", r.max_iters.to_string()),
            ("reconstruct.rel_tol", r.rel_tol.to_string()),
            ("reconstruct.clamp", r.clamp.is_some().to_string()),
            ("reconstruct.restart", r.restart.to_string()),
            ("reconstruct.bin_width", self.boundary_bin_width.to_string()),
            ("localize.enabled", self.localize.enabled.to_string()),
            ("localize.window", triple(w.dx_range, w.dy_range, w.heading_range)),
            ("localize.steps", triple(w.dx_step, w.dy_step, w.heading_step)),
            ("localize.bins", self.localize.bins.to_string()),
            ("localize.offset", triple(o.dx, o.dy, o.heading)),
            ("localize.crop", self.localize.crop.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
