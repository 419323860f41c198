//! Static PNG figures from a run directory: map panels, convergence curve,
//! weight bars and the localization score surface.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use reflectmap_core::CellMap;

use crate::error::{Error, Result};
use crate::io;
use crate::pipeline::{CONVERGENCE, MAP, NAIVE, SCORES, TRUTH, WEIGHTS};

pub const PANELS: &str = "panels.png";
pub const CONVERGENCE_PLOT: &str = "convergence.png";
pub const WEIGHTS_PLOT: &str = "weights.png";
pub const SCORES_PLOT: &str = "scores.png";

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([0, 0, 0]);
const INK: Rgb<u8> = Rgb([31, 119, 180]);
const NEGATIVE: Rgb<u8> = Rgb([214, 39, 40]);
const UNOCCUPIED: Rgb<u8> = Rgb([60, 20, 60]);
const PLOT_W: u32 = 640;
const PLOT_H: u32 = 400;
const MARGIN: u32 = 30;

fn save(img: &RgbImage, path: &Path) -> Result<PathBuf> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path.to_path_buf())
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, c: Rgb<u8>) {
    for y in y0..(y0 + h).min(img.height()) {
        for x in x0..(x0 + w).min(img.width()) {
            img.put_pixel(x, y, c);
        }
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn axes(img: &mut RgbImage) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let m = MARGIN as i64;
    line(img, (m, h - m), (w - m, h - m), AXIS);
    line(img, (m, m), (m, h - m), AXIS);
}

/// Maps in a row, north up, separated by white gutters.
pub fn panels(maps: &[&CellMap]) -> RgbImage {
    let gutter = 8;
    let w: u32 = maps.iter().map(|m| m.spec().n_x as u32).sum::<u32>() + gutter * (maps.len() as u32 + 1);
    let h = maps.iter().map(|m| m.spec().n_y as u32).max().unwrap_or(0) + 2 * gutter;
    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);
    let mut x0 = gutter;
    for map in maps {
        let s = map.spec();
        for n in 0..s.len() {
            let (row, col) = s.row_col(n);
            let c = map.get(n).map_or(UNOCCUPIED, |v| {
                let b = io::to_byte(v);
                Rgb([b, b, b])
            });
            img.put_pixel(x0 + col as u32, gutter + (s.n_y - 1 - row) as u32, c);
        }
        x0 += s.n_x as u32 + gutter;
    }
    img
}

/// log10 objective against iteration.
pub fn convergence_plot(objectives: &[f64]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, BACKGROUND);
    axes(&mut img);
    let logs: Vec<f64> = objectives.iter().map(|&o| o.max(1e-300).log10()).collect();
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if logs.is_empty() || !lo.is_finite() {
        return img;
    }
    let span = (hi - lo).max(1e-12);
    let (pw, ph) = ((PLOT_W - 2 * MARGIN) as f64, (PLOT_H - 2 * MARGIN) as f64);
    let last = (logs.len() - 1).max(1) as f64;
    let point = |i: usize, v: f64| {
        (
            MARGIN as i64 + (i as f64 / last * pw).round() as i64,
            (PLOT_H - MARGIN) as i64 - ((v - lo) / span * ph).round() as i64,
        )
    };
    for (i, pair) in logs.windows(2).enumerate() {
        line(&mut img, point(i, pair[0]), point(i + 1, pair[1]), INK);
    }
    if logs.len() == 1 {
        let (x, y) = point(0, logs[0]);
        fill(&mut img, x as u32, y as u32, 2, 2, INK);
    }
    img
}

/// One bar per perspective, scaled by the largest magnitude.
pub fn weights_plot(weights: &[f64]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, BACKGROUND);
    let top = weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    let pw = PLOT_W - 2 * MARGIN;
    let mid = PLOT_H / 2;
    let half = (PLOT_H / 2 - MARGIN) as f64;
    if !weights.is_empty() && top > 0.0 {
        let slot = (pw as f64 / weights.len() as f64).max(1.0);
        for (i, &w) in weights.iter().enumerate() {
            let x = MARGIN + (i as f64 * slot) as u32;
            let bw = ((slot * 0.8) as u32).max(1);
            let bh = (w.abs() / top * half).round() as u32;
            if w >= 0.0 {
                fill(&mut img, x, mid - bh, bw, bh, INK);
            } else {
                fill(&mut img, x, mid, bw, bh, NEGATIVE);
            }
        }
    }
    line(&mut img, (MARGIN as i64, mid as i64), ((PLOT_W - MARGIN) as i64, mid as i64), AXIS);
    img
}

fn heat(t: f64) -> Rgb<u8> {
    // Dark blue through teal to yellow.
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t < 0.5 {
        let s = t * 2.0;
        Rgb([lerp(68.0, 33.0, s), lerp(1.0, 145.0, s), lerp(84.0, 140.0, s)])
    } else {
        let s = (t - 0.5) * 2.0;
        Rgb([lerp(33.0, 253.0, s), lerp(145.0, 231.0, s), lerp(140.0, 37.0, s)])
    }
}

/// Score heatmap over (dx, dy) at the heading of the best-scoring pose; dx
/// runs left to right, dy bottom to top.
pub fn scores_plot(scores: &[(reflectmap_core::localize::Pose, f64)]) -> RgbImage {
    let best = scores
        .iter()
        .filter(|s| s.1.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|s| s.0.heading);
    let slice: Vec<_> = match best {
        Some(h) => scores.iter().filter(|s| s.0.heading == h).collect(),
        None => Vec::new(),
    };
    let mut xs: Vec<f64> = slice.iter().map(|s| s.0.dx).collect();
    let mut ys: Vec<f64> = slice.iter().map(|s| s.0.dy).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let cell = (PLOT_W.min(PLOT_H) / (xs.len().max(ys.len()).max(1) as u32)).clamp(2, 32);
    let mut img = RgbImage::from_pixel(
        xs.len() as u32 * cell + 2 * MARGIN,
        ys.len() as u32 * cell + 2 * MARGIN,
        BACKGROUND,
    );
    let (lo, hi) = slice
        .iter()
        .filter(|s| s.1.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.1), b.max(s.1)));
    let span = (hi - lo).max(1e-12);
    for s in slice {
        let i = xs.partition_point(|&x| x < s.0.dx) as u32;
        let j = ys.partition_point(|&y| y < s.0.dy) as u32;
        let c = if s.1.is_finite() { heat((s.1 - lo) / span) } else { AXIS };
        fill(&mut img, MARGIN + i * cell, MARGIN + (ys.len() as u32 - 1 - j) * cell, cell, cell, c);
    }
    img
}

/// Writes every figure whose inputs exist in `dir` and returns their paths.
/// Missing inputs skip their figure with a warning; a directory yielding no
/// figure at all is an error.
pub fn emit_figures(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    let have = |name: &str| {
        let ok = dir.join(name).exists();
        if !ok {
            log::warn!("{} not found, skipping its figure", dir.join(name).display());
        }
        ok
    };

    if have(NAIVE) && have(MAP) {
        let naive = io::read_map(&dir.join(NAIVE))?;
        let map = io::read_map(&dir.join(MAP))?;
        let truth = dir
            .join(TRUTH)
            .exists()
            .then(|| io::read_map(&dir.join(TRUTH)))
            .transpose()?;
        let mut maps = vec![&naive, &map];
        maps.extend(truth.as_ref());
        out.push(save(&panels(&maps), &dir.join(PANELS))?);
    }
    if have(CONVERGENCE) {
        let log = io::read_convergence(&dir.join(CONVERGENCE))?;
        let objectives: Vec<f64> = log.iter().map(|r| r.objective).collect();
        out.push(save(&convergence_plot(&objectives), &dir.join(CONVERGENCE_PLOT))?);
    }
    if have(WEIGHTS) {
        let w = io::read_weights(&dir.join(WEIGHTS))?;
        out.push(save(&weights_plot(&w.values()), &dir.join(WEIGHTS_PLOT))?);
    }
    if have(SCORES) {
        let scores = io::read_scores(&dir.join(SCORES))?;
        out.push(save(&scores_plot(&scores), &dir.join(SCORES_PLOT))?);
    }
    if out.is_empty() {
        return Err(Error::format(dir, "no run artifacts to plot"));
    }
    Ok(out)
}
