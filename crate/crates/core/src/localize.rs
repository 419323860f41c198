//! Pose registration of a local gradient-magnitude map against a prior map
//! by maximizing normalized mutual information over a discrete window.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fusion::{fuse, perspective_gradients, FusionConfig, WeightVector};
use crate::gradients::gradient_magnitude;
use crate::grid::CellMap;
use crate::perspectives::PerspectiveSet;
use crate::sum::NeumaierSum;

/// Scores below this are flagged as unreliable matches.
pub const LOW_CONFIDENCE: f64 = 1.05;

pub const DEFAULT_BINS: usize = 64;

/// Rigid 2-D transform: translation in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub dx: f64,
    pub dy: f64,
    pub heading: f64,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(h: f64) -> f64 {
    let w = libm::remainder(h, 2.0 * PI);
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

impl Pose {
    pub fn new(dx: f64, dy: f64, heading: f64) -> Self {
        Self {
            dx,
            dy,
            heading: wrap_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

/// Symmetric search bounds and step sizes around the identity pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub dx_range: f64,
    pub dy_range: f64,
    pub heading_range: f64,
    pub dx_step: f64,
    pub dy_step: f64,
    pub heading_step: f64,
}

impl SearchWindow {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.dx_step, "dx_step"),
            (self.dy_step, "dy_step"),
            (self.heading_step, "heading_step"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "step must be positive and finite"));
            }
        }
        for (v, name) in [
            (self.dx_range, "dx_range"),
            (self.dy_range, "dy_range"),
            (self.heading_range, "heading_range"),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "range must be finite"));
            }
        }
        Ok(())
    }
}

fn offsets(range: f64, step: f64) -> Vec<f64> {
    if range < 0.0 {
        return Vec::new();
    }
    let k = libm::floor(range / step + 1e-9) as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

/// Every pose on the window's lattice.
pub fn candidates(window: &SearchWindow) -> Result<Vec<Pose>> {
    window.validate()?;
    let xs = offsets(window.dx_range, window.dx_step);
    let ys = offsets(window.dy_range, window.dy_step);
    let hs = offsets(window.heading_range, window.heading_step);
    let mut out = Vec::with_capacity(xs.len() * ys.len() * hs.len());
    for &h in &hs {
        for &dx in &xs {
            for &dy in &ys {
                out.push(Pose::new(dx, dy, h));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoCandidates);
    }
    Ok(out)
}

fn bin_indices(values: impl Iterator<Item = f64> + Clone, bins: usize) -> Vec<usize> {
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let width = hi - lo;
    values
        .map(|v| {
            if width > 0.0 {
                ((libm::floor((v - lo) / width * bins as f64)) as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

/// Entropy in bits of a distribution given by integer counts summing to `total`.
fn entropy(counts: &mut [u32], total: usize) -> f64 {
    counts.sort_unstable();
    let n = total as f64;
    let mut acc = NeumaierSum::new();
    for &c in counts.iter().filter(|&&c| c > 0) {
        let p = c as f64 / n;
        acc.add(-p * libm::log2(p));
    }
    acc.value()
}

/// NMI of paired samples with `bins` equal-width bins over each side's range.
pub fn nmi_pairs(pairs: &[(f64, f64)], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::param("bins", "need at least 2 bins"));
    }
    if pairs.len() < 2 {
        return Err(Error::InsufficientOverlap {
            required: 2,
            found: pairs.len(),
        });
    }
    let ia = bin_indices(pairs.iter().map(|p| p.0), bins);
    let ib = bin_indices(pairs.iter().map(|p| p.1), bins);
    let mut ca = vec![0u32; bins];
    let mut cb = vec![0u32; bins];
    let mut joint = vec![0u32; bins * bins];
    for (&a, &b) in ia.iter().zip(&ib) {
        ca[a] += 1;
        cb[b] += 1;
        joint[a * bins + b] += 1;
    }
    let n = pairs.len();
    let h_joint = entropy(&mut joint, n);
    if h_joint == 0.0 {
        return Ok(2.0);
    }
    Ok((entropy(&mut ca, n) + entropy(&mut cb, n)) / h_joint)
}

/// Normalized mutual information `(H(A) + H(B)) / H(A, B)` over the cells
/// occupied in both maps.
pub fn nmi(a: &CellMap, b: &CellMap, bins: usize) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    let pairs: Vec<(f64, f64)> = a
        .iter_occupied()
        .filter_map(|(n, va)| b.get(n).map(|vb| (va, vb)))
        .collect();
    nmi_pairs(&pairs, bins)
}

/// Value pairs (prior, transformed local) over prior cells covered by the
/// local map after applying `pose`: rotation about the local map's center,
/// then translation, nearest-cell resampling.
pub fn overlap_pairs(prior: &CellMap, local: &CellMap, pose: &Pose) -> Vec<(f64, f64)> {
    let ps = prior.spec();
    let ls = local.spec();
    let (cx, cy) = ls.center();
    let (s, c) = libm::sincos(pose.heading);
    let x0 = ls.origin[0];
    let y0 = ls.origin[1];
    let x1 = x0 + ls.n_x as f64 * ls.cell_size;
    let y1 = y0 + ls.n_y as f64 * ls.cell_size;
    let forward = |x: f64, y: f64| {
        let (u, v) = (x - cx, y - cy);
        (c * u - s * v + cx + pose.dx, s * u + c * v + cy + pose.dy)
    };
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
        let (u, v) = forward(x, y);
        lo_x = lo_x.min(u);
        lo_y = lo_y.min(v);
        hi_x = hi_x.max(u);
        hi_y = hi_y.max(v);
    }
    let to_col = |x: f64| (x - ps.origin[0]) / ps.cell_size;
    let to_row = |y: f64| (y - ps.origin[1]) / ps.cell_size;
    let clamp_idx = |v: f64, n: usize| libm::floor(v).clamp(0.0, n as f64 - 1.0) as usize;
    if hi_x < ps.origin[0] || hi_y < ps.origin[1] || to_col(lo_x) >= ps.n_x as f64 || to_row(lo_y) >= ps.n_y as f64 {
        return Vec::new();
    }
    let (c_lo, c_hi) = (clamp_idx(to_col(lo_x), ps.n_x), clamp_idx(to_col(hi_x), ps.n_x));
    let (r_lo, r_hi) = (clamp_idx(to_row(lo_y), ps.n_y), clamp_idx(to_row(hi_y), ps.n_y));

    let mut pairs = Vec::with_capacity((c_hi - c_lo + 1) * (r_hi - r_lo + 1));
    for col in c_lo..=c_hi {
        for row in r_lo..=r_hi {
            let n = col * ps.n_y + row;
            let Some(vp) = prior.get(n) else { continue };
            let (qx, qy) = ps.cell_center(n);
            let (u, v) = (qx - pose.dx - cx, qy - pose.dy - cy);
            let (lx, ly) = (c * u + s * v + cx, -s * u + c * v + cy);
            if let Some(m) = ls.cell_of(lx, ly) {
                if let Some(vl) = local.get(m) {
                    pairs.push((vp, vl));
                }
            }
        }
    }
    pairs
}

/// NMI score of one candidate pose.
pub fn evaluate_pose(prior: &CellMap, local: &CellMap, pose: &Pose, bins: usize) -> Result<f64> {
    nmi_pairs(&overlap_pairs(prior, local, pose), bins)
}

/// Search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub pose: Pose,
    pub score: f64,
    pub low_confidence: bool,
    /// Candidates that produced a score.
    pub evaluated: usize,
}

/// Ordering under which the best candidate is the maximum: higher score,
/// then smaller translation, then smaller absolute heading, then the
/// lexicographically smaller pose.
pub fn preference(a: &(Pose, f64), b: &(Pose, f64)) -> Ordering {
    let t = |p: &Pose| p.dx * p.dx + p.dy * p.dy;
    a.1.total_cmp(&b.1)
        .then_with(|| t(&b.0).total_cmp(&t(&a.0)))
        .then_with(|| libm::fabs(b.0.heading).total_cmp(&libm::fabs(a.0.heading)))
        .then_with(|| b.0.dx.total_cmp(&a.0.dx))
        .then_with(|| b.0.dy.total_cmp(&a.0.dy))
        .then_with(|| b.0.heading.total_cmp(&a.0.heading))
}

/// Picks the preferred candidate among those with a finite score.
pub fn best_candidate(scored: &[(Pose, f64)]) -> Result<Registration> {
    let valid: Vec<&(Pose, f64)> = scored.iter().filter(|(_, s)| s.is_finite()).collect();
    let best = valid
        .iter()
        .copied()
        .max_by(|a, b| preference(a, b))
        .ok_or(Error::NoCandidates)?;
    Ok(Registration {
        pose: best.0,
        score: best.1,
        low_confidence: best.1 < LOW_CONFIDENCE,
        evaluated: valid.len(),
    })
}

/// Scores every candidate; poses without sufficient overlap score NaN.
pub fn score_surface(prior: &CellMap, local: &CellMap, window: &SearchWindow, bins: usize) -> Result<Vec<(Pose, f64)>> {
    if bins < 2 {
        return Err(Error::param("bins", "need at least 2 bins"));
    }
    Ok(candidates(window)?
        .into_iter()
        .map(|p| (p, evaluate_pose(prior, local, &p, bins).unwrap_or(f64::NAN)))
        .collect())
}

/// Exhaustive search for the pose aligning `local` with `prior`.
pub fn register(prior: &CellMap, local: &CellMap, window: &SearchWindow, bins: usize) -> Result<Registration> {
    best_candidate(&score_surface(prior, local, window, bins)?)
}

/// Gradient magnitude of the uniformly fused perspectives, without denoising.
pub fn local_gradient_magnitude(set: &PerspectiveSet) -> Result<CellMap> {
    let grads = perspective_gradients(set);
    let weights = WeightVector::uniform(grads.keys());
    let cfg = FusionConfig {
        denoise: false,
        ..FusionConfig::default()
    };
    Ok(gradient_magnitude(&fuse(&grads, &weights, &cfg)?))
}
