//! Binning of globally projected reflectivity measurements into
//! map-perspectives: one averaged map per (beam, incidence, range) observer.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::grid::{CellMap, GridSpec, OccupancySet};
use crate::sum::NeumaierSum;

/// Observer-perspective: laser index plus incidence and range bins.
/// Ordering is lexicographic over (beam, incidence_bin, range_bin).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PerspectiveKey {
    pub beam: u32,
    pub incidence_bin: u32,
    pub range_bin: u32,
}

impl PerspectiveKey {
    pub const fn new(beam: u32, incidence_bin: u32, range_bin: u32) -> Self {
        Self {
            beam,
            incidence_bin,
            range_bin,
        }
    }
}

impl fmt::Display for PerspectiveKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "b{}_i{}_r{}",
            self.beam, self.incidence_bin, self.range_bin
        )
    }
}

/// Bin widths for the incidence angle and range components of a key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub incidence_deg: f64,
    pub range_m: f64,
}

impl Default for Binning {
    fn default() -> Self {
        Self {
            incidence_deg: 2.0,
            range_m: 2.0,
        }
    }
}

impl Binning {
    pub fn new(incidence_deg: f64, range_m: f64) -> Result<Self> {
        if !(incidence_deg > 0.0 && incidence_deg.is_finite()) {
            return Err(Error::param("incidence_deg", "bin width must be positive"));
        }
        if !(range_m > 0.0 && range_m.is_finite()) {
            return Err(Error::param("range_m", "bin width must be positive"));
        }
        Ok(Self {
            incidence_deg,
            range_m,
        })
    }

    pub fn key(&self, beam: u32, incidence_deg: f64, range_m: f64) -> Result<PerspectiveKey> {
        let bin = |value: f64, width: f64, name| {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::param(name, "must be finite and non-negative"));
            }
            Ok(libm::floor(value / width) as u32)
        };
        Ok(PerspectiveKey {
            beam,
            incidence_bin: bin(incidence_deg, self.incidence_deg, "incidence_deg")?,
            range_bin: bin(range_m, self.range_m, "range_m")?,
        })
    }

    pub fn bin(&self, raw: &RawMeasurement) -> Result<Measurement> {
        Ok(Measurement {
            world_x: raw.x_m,
            world_y: raw.y_m,
            reflectivity: raw.reflectivity,
            key: self.key(raw.beam, raw.incidence_deg, raw.range_m)?,
        })
    }
}

/// One reflectivity return as recorded: position, value and observer
/// geometry before binning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMeasurement {
    pub x_m: f64,
    pub y_m: f64,
    pub reflectivity: f64,
    pub beam: u32,
    pub incidence_deg: f64,
    pub range_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub world_x: f64,
    pub world_y: f64,
    pub reflectivity: f64,
    pub key: PerspectiveKey,
}

/// A single map-perspective and its per-cell measurement counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Perspective {
    pub map: CellMap,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveSet {
    spec: GridSpec,
    perspectives: BTreeMap<PerspectiveKey, Perspective>,
    dropped: usize,
}

impl PerspectiveSet {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            spec,
            perspectives: BTreeMap::new(),
            dropped: 0,
        }
    }

    /// Wraps precomputed maps; each occupied cell counts as one measurement.
    pub fn from_maps(
        spec: GridSpec,
        maps: impl IntoIterator<Item = (PerspectiveKey, CellMap)>,
    ) -> Result<Self> {
        let mut set = Self::new(spec);
        for (key, map) in maps {
            if *map.spec() != spec {
                return Err(Error::GridMismatch);
            }
            let counts = map.occupied_mask().iter().map(|&o| o as u32).collect();
            set.perspectives.insert(key, Perspective { map, counts });
        }
        Ok(set)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.perspectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perspectives.is_empty()
    }

    /// Measurements that fell outside the grid or were non-finite.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn get(&self, key: &PerspectiveKey) -> Option<&Perspective> {
        self.perspectives.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &PerspectiveKey> {
        self.perspectives.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PerspectiveKey, &Perspective)> {
        self.perspectives.iter()
    }

    pub fn maps(&self) -> impl Iterator<Item = (&PerspectiveKey, &CellMap)> {
        self.perspectives.iter().map(|(k, p)| (k, &p.map))
    }

    /// Merges a set built from a disjoint shard of keys.
    pub fn merge(&mut self, other: PerspectiveSet) -> Result<()> {
        if other.spec != self.spec {
            return Err(Error::GridMismatch);
        }
        for (key, p) in other.perspectives {
            if self.perspectives.insert(key, p).is_some() {
                return Err(Error::param("merge", "shards share a perspective key"));
            }
        }
        self.dropped += other.dropped;
        Ok(())
    }
}

/// Averages measurements per (perspective, cell).
///
/// Cell sums are taken over values sorted within each cell and accumulated
/// with compensation, so any permutation of the input yields bit-identical
/// maps.
pub fn build_perspectives(
    measurements: impl IntoIterator<Item = Measurement>,
    spec: GridSpec,
) -> PerspectiveSet {
    let mut dropped = 0;
    let mut binned: Vec<(PerspectiveKey, usize, f64)> = measurements
        .into_iter()
        .filter_map(|m| {
            let cell = m
                .reflectivity
                .is_finite()
                .then(|| spec.cell_of(m.world_x, m.world_y))
                .flatten();
            if cell.is_none() {
                dropped += 1;
            }
            cell.map(|n| (m.key, n, m.reflectivity))
        })
        .collect();
    binned.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });

    let mut set = PerspectiveSet::new(spec);
    set.dropped = dropped;
    let mut i = 0;
    while i < binned.len() {
        let key = binned[i].0;
        let mut map = CellMap::empty(spec);
        let mut counts = vec![0u32; spec.len()];
        while i < binned.len() && binned[i].0 == key {
            let cell = binned[i].1;
            let mut acc = NeumaierSum::new();
            let mut count = 0u32;
            while i < binned.len() && binned[i].0 == key && binned[i].1 == cell {
                acc.add(binned[i].2);
                count += 1;
                i += 1;
            }
            map.set(cell, acc.value() / count as f64);
            counts[cell] = count;
        }
        set.perspectives.insert(key, Perspective { map, counts });
    }
    log::debug!(
        "built {} perspectives, dropped {} measurements",
        set.len(),
        dropped
    );
    set
}

/// Sorted union of all perspective occupancies.
pub fn union_occupancy(set: &PerspectiveSet) -> OccupancySet {
    let mut mask = vec![false; set.spec.len()];
    for (_, p) in set.iter() {
        for (m, &o) in mask.iter_mut().zip(p.map.occupied_mask()) {
            *m |= o;
        }
    }
    OccupancySet::from_mask(&mask)
}

/// Per-cell mean of every measurement regardless of perspective: the naive
/// fusion baseline.
pub fn naive_mean_map(
    measurements: impl IntoIterator<Item = Measurement>,
    spec: GridSpec,
) -> CellMap {
    let mut binned: Vec<(usize, f64)> = measurements
        .into_iter()
        .filter(|m| m.reflectivity.is_finite())
        .filter_map(|m| spec.cell_of(m.world_x, m.world_y).map(|n| (n, m.reflectivity)))
        .collect();
    binned.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut map = CellMap::empty(spec);
    for group in binned.chunk_by(|a, b| a.0 == b.0) {
        let sum: NeumaierSum = group.iter().map(|&(_, v)| v).collect();
        map.set(group[0].0, sum.value() / group.len() as f64);
    }
    map
}
