//! On-disk formats.
//!
//! Maps are 8-bit binary PGM files written north-up (the last grid row is the
//! first image line) with a sibling `<stem>.mask.pgm` holding 255 for occupied
//! cells. Grid geometry rides along in a `# reflectmap` header comment.
//! Gradient fields are `RGRD` files: a 16-byte header (`RGRD`, n_x, n_y,
//! reserved, little-endian u32) followed by the gx and gy planes as
//! little-endian f32 in column-major cell order, with validity masks in
//! `<stem>.valid_x.pgm` and `<stem>.valid_y.pgm`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use reflectmap_core::localize::Pose;
use reflectmap_core::perspectives::RawMeasurement;
use reflectmap_core::reconstruct::IterationRecord;
use reflectmap_core::segment::{MarkMask, SegmentationReport};
use reflectmap_core::simulate::LaserModel;
use reflectmap_core::{CellMap, GradientField, GridSpec, PerspectiveKey, WeightVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell size assumed for PGM files without a geometry comment.
pub const DEFAULT_CELL_SIZE: f64 = 0.1;

const GEOMETRY_TAG: &str = "reflectmap";

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Path with a trailing `.pgm` or `.rgrd` removed.
pub fn stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm" | "rgrd") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

/// Value and mask file paths of a map.
pub fn map_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = stem(path);
    (with_suffix(&s, ".pgm"), with_suffix(&s, ".mask.pgm"))
}

/// Data and validity-mask paths of a gradient file.
pub fn gradient_paths(path: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let s = stem(path);
    (
        with_suffix(&s, ".rgrd"),
        with_suffix(&s, ".valid_x.pgm"),
        with_suffix(&s, ".valid_y.pgm"),
    )
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes per-cell bytes as a north-up PGM.
pub fn write_pgm(path: &Path, spec: &GridSpec, cells: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    let header = format!(
        "P5\n# {GEOMETRY_TAG} cell_size={} origin={},{}\n{} {}\n255\n",
        spec.cell_size, spec.origin[0], spec.origin[1], spec.n_x, spec.n_y
    );
    let mut body = Vec::with_capacity(header.len() + spec.len());
    body.extend_from_slice(header.as_bytes());
    for row in (0..spec.n_y).rev() {
        body.extend((0..spec.n_x).map(|col| cells[col * spec.n_y + row]));
    }
    w.write_all(&body).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

fn parse_geometry(comment: &str) -> Option<(f64, [f64; 2])> {
    let rest = comment.trim().strip_prefix(GEOMETRY_TAG)?;
    let (mut cell, mut origin) = (None, None);
    for field in rest.split_whitespace() {
        match field.split_once('=')? {
            ("cell_size", v) => cell = v.parse().ok(),
            ("origin", v) => {
                let (x, y) = v.split_once(',')?;
                origin = Some([x.parse().ok()?, y.parse().ok()?]);
            }
            _ => {}
        }
    }
    Some((cell?, origin?))
}

/// Reads a binary PGM into per-cell bytes in grid order.
pub fn read_pgm(path: &Path) -> Result<(GridSpec, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(path, reason);
    let mut pos = 0;
    let mut geometry = None;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        match data.get(pos) {
            None => return Err(bad("truncated header")),
            Some(b'#') => {
                let end = data[pos..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(data.len(), |e| pos + e);
                let text = String::from_utf8_lossy(&data[pos + 1..end]);
                geometry = geometry.or_else(|| parse_geometry(&text));
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let start = pos;
                while data.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                    pos += 1;
                }
                tokens.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
            }
        }
    }
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (n_x, n_y, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = data.get(pos..pos + n_x * n_y).ok_or_else(|| bad("truncated raster"))?;
    let (cell_size, origin) = geometry.unwrap_or_else(|| {
        log::debug!("{}: no geometry comment, assuming {DEFAULT_CELL_SIZE} m cells", path.display());
        (DEFAULT_CELL_SIZE, [0.0, 0.0])
    });
    let spec = GridSpec::new(n_x, n_y, cell_size, origin)?;
    let mut cells = vec![0u8; spec.len()];
    for (line, chunk) in raster.chunks_exact(n_x).enumerate() {
        let row = n_y - 1 - line;
        for (col, &b) in chunk.iter().enumerate() {
            cells[col * n_y + row] = b;
        }
    }
    Ok((spec, cells))
}

pub fn write_mask(path: &Path, spec: &GridSpec, mask: &[bool]) -> Result<()> {
    let cells: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_pgm(path, spec, &cells)
}

/// Nonzero pixels are set.
pub fn read_mask(path: &Path) -> Result<(GridSpec, Vec<bool>)> {
    let (spec, cells) = read_pgm(path)?;
    Ok((spec, cells.into_iter().map(|b| b != 0).collect()))
}

/// Writes `<stem>.pgm` (values rounded and clamped to 0..=255, unoccupied
/// cells as 0) and `<stem>.mask.pgm`.
pub fn write_map(path: &Path, map: &CellMap) -> Result<Vec<PathBuf>> {
    let (values, mask) = map_paths(path);
    let cells: Vec<u8> = (0..map.spec().len())
        .map(|n| map.get(n).map_or(0, to_byte))
        .collect();
    write_pgm(&values, map.spec(), &cells)?;
    write_mask(&mask, map.spec(), map.occupied_mask())?;
    Ok(vec![values, mask])
}

/// Reads a map; without a mask file every cell counts as occupied.
pub fn read_map(path: &Path) -> Result<CellMap> {
    let (values, mask) = map_paths(path);
    let (spec, cells) = read_pgm(&values)?;
    let occupied = if mask.exists() {
        let (mspec, occupied) = read_mask(&mask)?;
        if (mspec.n_x, mspec.n_y) != (spec.n_x, spec.n_y) {
            return Err(Error::format(&mask, "mask size differs from the map"));
        }
        occupied
    } else {
        log::warn!("{} missing, treating every cell as occupied", mask.display());
        vec![true; spec.len()]
    };
    Ok(CellMap::from_parts(
        spec,
        cells.into_iter().map(f64::from).collect(),
        occupied,
    )?)
}

/// Marks as 255 in `<stem>.pgm`, occupancy in `<stem>.mask.pgm`.
pub fn write_marks(path: &Path, marks: &MarkMask) -> Result<Vec<PathBuf>> {
    write_map(path, &marks.to_cell_map())
}

pub fn read_marks(path: &Path) -> Result<MarkMask> {
    Ok(MarkMask::from_cell_map(&read_map(path)?))
}

const RGRD_MAGIC: &[u8; 4] = b"RGRD";

pub fn write_gradient(path: &Path, g: &GradientField) -> Result<Vec<PathBuf>> {
    let (data, vx, vy) = gradient_paths(path);
    let spec = g.spec();
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| Error::format(&data, "grid too large for RGRD"))
    };
    let mut bytes = Vec::with_capacity(16 + 8 * spec.len());
    bytes.extend_from_slice(RGRD_MAGIC);
    bytes.extend_from_slice(&dim(spec.n_x)?.to_le_bytes());
    bytes.extend_from_slice(&dim(spec.n_y)?.to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    for (values, valid) in [(g.gx(), g.valid_x()), (g.gy(), g.valid_y())] {
        for (&v, &ok) in values.iter().zip(valid) {
            let v = if ok { v as f32 } else { 0.0 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut w = create(&data)?;
    w.write_all(&bytes).map_err(|e| Error::io(&data, e))?;
    finish(&data, w)?;
    write_mask(&vx, spec, g.valid_x())?;
    write_mask(&vy, spec, g.valid_y())?;
    Ok(vec![data, vx, vy])
}

/// Reads a gradient field; grid geometry comes from the x-validity mask.
pub fn read_gradient(path: &Path) -> Result<GradientField> {
    let (data, vx, vy) = gradient_paths(path);
    let bytes = fs::read(&data).map_err(|e| Error::io(&data, e))?;
    if bytes.len() < 16 || &bytes[..4] != RGRD_MAGIC {
        return Err(Error::format(&data, "missing RGRD header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (n_x, n_y) = (word(4), word(8));
    let n = n_x * n_y;
    if bytes.len() != 16 + 8 * n {
        return Err(Error::format(&data, "plane size does not match the header"));
    }
    let plane = |k: usize| -> Vec<f64> {
        bytes[16 + 4 * k * n..16 + 4 * (k + 1) * n]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect()
    };
    let (spec, valid_x) = read_mask(&vx)?;
    let (yspec, valid_y) = read_mask(&vy)?;
    if (spec.n_x, spec.n_y) != (n_x, n_y) || (yspec.n_x, yspec.n_y) != (n_x, n_y) {
        return Err(Error::format(&data, "validity masks do not match the header"));
    }
    Ok(GradientField::from_parts(spec, plane(0), plane(1), valid_x, valid_y)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRow {
    x_m: f64,
    y_m: f64,
    reflectivity: f64,
    beam: u32,
    incidence_deg: f64,
    range_m: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    reader(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::csv(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a measurement CSV, rejecting rows with non-finite fields.
pub fn read_measurements(path: &Path) -> Result<Vec<RawMeasurement>> {
    let mut out = Vec::new();
    for (line, row) in reader(path)?.deserialize::<MeasurementRow>().enumerate() {
        let r = row.map_err(|e| Error::csv(path, e))?;
        if ![r.x_m, r.y_m, r.reflectivity, r.incidence_deg, r.range_m]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::format(path, format!("row {}: non-finite field", line + 1)));
        }
        out.push(RawMeasurement {
            x_m: r.x_m,
            y_m: r.y_m,
            reflectivity: r.reflectivity,
            beam: r.beam,
            incidence_deg: r.incidence_deg,
            range_m: r.range_m,
        });
    }
    Ok(out)
}

pub fn write_measurements(path: &Path, ms: &[RawMeasurement]) -> Result<()> {
    write_rows(
        path,
        ms.iter().map(|m| MeasurementRow {
            x_m: m.x_m,
            y_m: m.y_m,
            reflectivity: m.reflectivity,
            beam: m.beam,
            incidence_deg: m.incidence_deg,
            range_m: m.range_m,
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightRow {
    beam: u32,
    incidence_bin: u32,
    range_bin: u32,
    weight: f64,
}

pub fn write_weights(path: &Path, w: &WeightVector) -> Result<()> {
    write_rows(
        path,
        w.iter().map(|(k, weight)| WeightRow {
            beam: k.beam,
            incidence_bin: k.incidence_bin,
            range_bin: k.range_bin,
            weight,
        }),
    )
}

pub fn read_weights(path: &Path) -> Result<WeightVector> {
    let rows: Vec<WeightRow> = read_rows(path)?;
    Ok(WeightVector::new(
        rows.into_iter()
            .map(|r| (PerspectiveKey::new(r.beam, r.incidence_bin, r.range_bin), r.weight))
            .collect(),
    )?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ConvergenceRow {
    iter: usize,
    objective: f64,
    rel_step: f64,
}

pub fn write_convergence(path: &Path, log: &[IterationRecord]) -> Result<()> {
    write_rows(
        path,
        log.iter().map(|r| ConvergenceRow {
            iter: r.iteration,
            objective: r.objective,
            rel_step: r.rel_step,
        }),
    )
}

pub fn read_convergence(path: &Path) -> Result<Vec<IterationRecord>> {
    let rows: Vec<ConvergenceRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| IterationRecord {
            iteration: r.iter,
            objective: r.objective,
            rel_step: r.rel_step,
        })
        .collect())
}

/// Score surface rows; poses without overlap carry an empty score.
pub fn write_scores(path: &Path, scores: &[(Pose, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["dx", "dy", "heading", "score"])
        .map_err(|e| Error::csv(path, e))?;
    for (p, s) in scores {
        let score = if s.is_finite() { s.to_string() } else { String::new() };
        w.write_record([p.dx.to_string(), p.dy.to_string(), p.heading.to_string(), score])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<(Pose, f64)>> {
    let mut out = Vec::new();
    for record in reader(path)?.records() {
        let r = record.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| -> Result<f64> {
            match r.get(i) {
                Some("") => Ok(f64::NAN),
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad number {s:?}"))),
                None => Err(Error::format(path, "short row")),
            }
        };
        out.push((Pose::new(field(0)?, field(1)?, field(2)?), field(3)?));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ReportRow {
    completeness: f64,
    correctness: f64,
    f_score: f64,
    true_positives: usize,
    false_positives: usize,
    false_negatives: usize,
}

pub fn write_report(path: &Path, r: &SegmentationReport) -> Result<()> {
    write_rows(
        path,
        [ReportRow {
            completeness: r.completeness,
            correctness: r.correctness,
            f_score: r.f_score,
            true_positives: r.true_positives,
            false_positives: r.false_positives,
            false_negatives: r.false_negatives,
        }],
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    beam: u32,
    gain: f64,
    offset: f64,
    gamma: f64,
    sigma: f64,
}

/// Per-beam response parameters.
pub fn write_profile(path: &Path, beams: &[LaserModel]) -> Result<()> {
    write_rows(
        path,
        beams.iter().map(|b| ProfileRow {
            beam: b.beam,
            gain: b.gain,
            offset: b.offset,
            gamma: b.gamma_exp,
            sigma: b.sigma,
        }),
    )
}

/// Overrides the response of every listed beam; unlisted beams keep theirs.
pub fn apply_profile(path: &Path, beams: &mut [LaserModel]) -> Result<()> {
    let rows: Vec<ProfileRow> = read_rows(path)?;
    for r in rows {
        let b = beams
            .iter_mut()
            .find(|b| b.beam == r.beam)
            .ok_or_else(|| Error::format(path, format!("beam {} is not in the rig", r.beam)))?;
        b.gain = r.gain;
        b.offset = r.offset;
        b.gamma_exp = r.gamma;
        b.sigma = r.sigma;
        b.validate()?;
    }
    Ok(())
}
