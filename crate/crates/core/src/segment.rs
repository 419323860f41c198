//! Road-mark extraction by global thresholding, cell-level evaluation and
//! map-quality metrics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{CellMap, GridSpec};
use crate::sum::NeumaierSum;

/// Marked cells of a grid. Unoccupied cells are never marked.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkMask {
    spec: GridSpec,
    marked: Vec<bool>,
    occupied: Vec<bool>,
}

impl MarkMask {
    pub fn new(spec: GridSpec, marked: Vec<bool>, occupied: Vec<bool>) -> Result<Self> {
        for v in [&marked, &occupied] {
            if v.len() != spec.len() {
                return Err(Error::LengthMismatch {
                    expected: spec.len(),
                    found: v.len(),
                });
            }
        }
        if let Some(index) = marked.iter().zip(&occupied).position(|(&m, &o)| m && !o) {
            return Err(Error::Unoccupied { index });
        }
        Ok(Self {
            spec,
            marked,
            occupied,
        })
    }

    /// Mask over a fully occupied grid.
    pub fn full(spec: GridSpec, marked: Vec<bool>) -> Result<Self> {
        let occupied = alloc::vec![true; spec.len()];
        Self::new(spec, marked, occupied)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn marked(&self) -> &[bool] {
        &self.marked
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn marked_count(&self) -> usize {
        self.marked.iter().filter(|&&m| m).count()
    }

    /// Marks as 255, unmarked occupied cells as 0.
    pub fn to_cell_map(&self) -> CellMap {
        let values = self.marked.iter().map(|&m| if m { 255.0 } else { 0.0 }).collect();
        CellMap::from_parts(self.spec, values, self.occupied.clone())
            .expect("mask vectors match the grid")
    }

    /// Occupied cells with a value of at least 128 are marked.
    pub fn from_cell_map(map: &CellMap) -> Self {
        let marked = (0..map.spec().len())
            .map(|n| map.get(n).is_some_and(|v| v >= 128.0))
            .collect();
        Self {
            spec: *map.spec(),
            marked,
            occupied: map.occupied_mask().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMethod {
    Otsu,
    Fixed(f64),
}

/// Otsu's threshold over values rounded to 256 gray levels. Among levels
/// with the same maximal between-class variance the midpoint is taken; the
/// threshold sits halfway between that level and the next.
pub fn otsu_threshold(map: &CellMap) -> Result<f64> {
    let mut hist = [0u64; 256];
    let mut total = 0u64;
    for (_, v) in map.iter_occupied() {
        hist[libm::round(v).clamp(0.0, 255.0) as usize] += 1;
        total += 1;
    }
    if total < 2 {
        return Err(Error::InsufficientOverlap {
            required: 2,
            found: total as usize,
        });
    }
    let level_sum: u64 = hist.iter().enumerate().map(|(l, &c)| l as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(f64, usize, usize)> = None;
    for k in 0..255 {
        n0 += hist[k];
        s0 += k as u64 * hist[k];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = level_sum - s0;
        // total^2 times the between-class variance.
        let a = (s0 as i128) * (n1 as i128) - (s1 as i128) * (n0 as i128);
        let score = (a as f64) * (a as f64) / ((n0 as f64) * (n1 as f64));
        best = match best {
            Some((s, first, _)) if score == s => Some((s, first, k)),
            Some((s, _, _)) if score < s => best,
            _ => Some((score, k, k)),
        };
    }
    let (_, first, last) = best.ok_or(Error::Degenerate("constant map has no separable classes"))?;
    Ok((first + last) as f64 / 2.0 + 0.5)
}

/// Marks occupied cells whose value reaches the threshold.
pub fn extract_markings(map: &CellMap, method: ThresholdMethod) -> Result<MarkMask> {
    let threshold = match method {
        ThresholdMethod::Otsu => otsu_threshold(map)?,
        ThresholdMethod::Fixed(t) => t,
    };
    let marked = (0..map.spec().len())
        .map(|n| map.get(n).is_some_and(|v| v >= threshold))
        .collect();
    MarkMask::new(*map.spec(), marked, map.occupied_mask().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationReport {
    pub completeness: f64,
    pub correctness: f64,
    pub f_score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Harmonic mean of completeness and correctness, zero when both are zero.
pub fn f_score(completeness: f64, correctness: f64) -> f64 {
    let s = completeness + correctness;
    if s > 0.0 {
        2.0 * completeness * correctness / s
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Cell-level comparison over cells occupied in both masks.
pub fn evaluate(mask: &MarkMask, truth: &MarkMask) -> Result<SegmentationReport> {
    if mask.spec != truth.spec {
        return Err(Error::GridMismatch);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for n in 0..mask.spec.len() {
        if !(mask.occupied[n] && truth.occupied[n]) {
            continue;
        }
        match (mask.marked[n], truth.marked[n]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let completeness = ratio(tp, tp + fn_);
    let correctness = ratio(tp, tp + fp);
    Ok(SegmentationReport {
        completeness,
        correctness,
        f_score: f_score(completeness, correctness),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

fn overlap_sq_errors(a: &CellMap, b: &CellMap) -> Result<(f64, usize)> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    let mut acc = NeumaierSum::new();
    let mut count = 0;
    for (n, va) in a.iter_occupied() {
        if let Some(vb) = b.get(n) {
            acc.add((va - vb) * (va - vb));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientOverlap {
            required: 1,
            found: 0,
        });
    }
    Ok((acc.value(), count))
}

/// Root-mean-square difference over cells occupied in both maps.
pub fn rmse(a: &CellMap, b: &CellMap) -> Result<f64> {
    let (sq, count) = overlap_sq_errors(a, b)?;
    Ok(libm::sqrt(sq / count as f64))
}

/// Peak signal-to-noise ratio in dB; infinite for identical overlaps.
pub fn psnr(a: &CellMap, b: &CellMap, peak: f64) -> Result<f64> {
    let e = rmse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * libm::log10(peak / e))
}
