//! Gridded map model: cell indexing, occupancy sets, and the sampling and
//! projection operators between full grids and occupied subsets.
//!
//! Cells are vectorized column-wise: cell `(row, col)` has linear index
//! `col * n_y + row`, so its horizontal neighbor is `n + n_y` and its vertical
//! neighbor is `n + 1`. Columns run along world x, rows along world y.
//!
//! Unoccupied cells hold `0.0` and are flagged in an explicit mask. No
//! consumer reads a value from an unoccupied cell.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_y: usize,
    /// Side length of one square cell, meters.
    pub cell_size: f64,
    /// World coordinates of the outer corner of cell (0, 0), meters.
    pub origin: [f64; 2],
}

impl GridSpec {
    pub fn new(n_x: usize, n_y: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidGrid("grid needs at least one cell per axis"));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidGrid("cell size must be positive and finite"));
        }
        if !origin[0].is_finite() || !origin[1].is_finite() {
            return Err(Error::InvalidGrid("origin must be finite"));
        }
        Ok(Self {
            n_x,
            n_y,
            cell_size,
            origin,
        })
    }

    /// Grid with 1-unit cells at the world origin.
    pub fn unit(n_x: usize, n_y: usize) -> Result<Self> {
        Self::new(n_x, n_y, 1.0, [0.0, 0.0])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_x * self.n_y
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linear_index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.n_y || col >= self.n_x {
            return Err(Error::IndexOutOfRange {
                row,
                col,
                n_y: self.n_y,
                n_x: self.n_x,
            });
        }
        Ok(col * self.n_y + row)
    }

    /// Inverse of [`linear_index`](Self::linear_index): `(row, col)`.
    #[inline]
    pub fn row_col(&self, n: usize) -> (usize, usize) {
        (n % self.n_y, n / self.n_y)
    }

    /// Cell containing a world point. Points on the upper boundary of the
    /// grid fall outside.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let fc = libm::floor((x - self.origin[0]) / self.cell_size);
        let fr = libm::floor((y - self.origin[1]) / self.cell_size);
        if !(fc >= 0.0 && fr >= 0.0) || fc >= self.n_x as f64 || fr >= self.n_y as f64 {
            return None;
        }
        Some(fc as usize * self.n_y + fr as usize)
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, n: usize) -> (f64, f64) {
        let (row, col) = self.row_col(n);
        (
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// World coordinates of the grid center.
    pub fn center(&self) -> (f64, f64) {
        (
            self.origin[0] + 0.5 * self.n_x as f64 * self.cell_size,
            self.origin[1] + 0.5 * self.n_y as f64 * self.cell_size,
        )
    }

    /// Indices of the up-to-four grid neighbors of `n`.
    #[inline]
    pub fn neighbors(&self, n: usize) -> impl Iterator<Item = usize> {
        let (row, col) = self.row_col(n);
        let n_y = self.n_y;
        [
            (row > 0).then(|| n - 1),
            (row + 1 < n_y).then(|| n + 1),
            (col > 0).then(|| n - n_y),
            (col + 1 < self.n_x).then(|| n + n_y),
        ]
        .into_iter()
        .flatten()
    }
}

/// Strictly increasing list of linear cell indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct OccupancySet(Vec<usize>);

impl OccupancySet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Validates ordering and range.
    pub fn new(indices: Vec<usize>, len: usize) -> Result<Self> {
        for (i, &n) in indices.iter().enumerate() {
            if n >= len {
                return Err(Error::LinearIndexOutOfRange { index: n, len });
            }
            if i > 0 && indices[i - 1] >= n {
                return Err(Error::UnsortedOccupancy { position: i });
            }
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates arbitrary indices.
    pub fn from_unsorted(mut indices: Vec<usize>, len: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, len)
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self(
            mask.iter()
                .enumerate()
                .filter_map(|(n, &m)| m.then_some(n))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, n: usize) -> bool {
        self.0.binary_search(&n).is_ok()
    }

    pub fn to_mask(&self, len: usize) -> Vec<bool> {
        let mut mask = vec![false; len];
        for n in self.iter() {
            mask[n] = true;
        }
        mask
    }

    pub fn union(&self, other: &Self) -> Self {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                core::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                core::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                core::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Self(out)
    }

    /// Elements of `self` not in `other`.
    pub fn difference(&self, other: &Self) -> Self {
        Self(self.iter().filter(|&n| !other.contains(n)).collect())
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.iter().all(|n| other.contains(n))
    }
}

/// Dense reflectivity grid with an occupancy mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMap {
    spec: GridSpec,
    values: Vec<f64>,
    occupied: Vec<bool>,
}

impl CellMap {
    /// All cells unoccupied.
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
            occupied: vec![false; spec.len()],
        }
    }

    /// Fully occupied map.
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        let occupied = vec![true; values.len()];
        Self::from_parts(spec, values, occupied)
    }

    /// Values at unoccupied cells are reset to zero.
    pub fn from_parts(spec: GridSpec, mut values: Vec<f64>, occupied: Vec<bool>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::LengthMismatch {
                expected: spec.len(),
                found: values.len(),
            });
        }
        if occupied.len() != spec.len() {
            return Err(Error::LengthMismatch {
                expected: spec.len(),
                found: occupied.len(),
            });
        }
        for (v, &occ) in values.iter_mut().zip(&occupied) {
            if !occ {
                *v = 0.0;
            }
        }
        Ok(Self {
            spec,
            values,
            occupied,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Raw value buffer; entries at unoccupied cells are zero.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn occupied_mask(&self) -> &[bool] {
        &self.occupied
    }

    #[inline]
    pub fn is_occupied(&self, n: usize) -> bool {
        self.occupied[n]
    }

    #[inline]
    pub fn get(&self, n: usize) -> Option<f64> {
        self.occupied[n].then(|| self.values[n])
    }

    pub fn set(&mut self, n: usize, value: f64) {
        self.values[n] = value;
        self.occupied[n] = true;
    }

    pub fn clear(&mut self, n: usize) {
        self.values[n] = 0.0;
        self.occupied[n] = false;
    }

    pub fn occupancy(&self) -> OccupancySet {
        OccupancySet::from_mask(&self.occupied)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// `(index, value)` over occupied cells in linear order.
    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.occupied)
            .enumerate()
            .filter_map(|(n, (&v, &o))| o.then_some((n, v)))
    }

    /// Copy restricted to `omega`.
    pub fn restrict(&self, omega: &OccupancySet) -> Result<Self> {
        let x = sample(self, omega)?;
        project(&x, omega, self.spec)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.occupied)
            .map(|(&v, &o)| if o { f(v) } else { 0.0 })
            .collect();
        Self {
            spec: self.spec,
            values,
            occupied: self.occupied.clone(),
        }
    }
}

/// Values at `omega`, in order.
pub fn sample(map: &CellMap, omega: &OccupancySet) -> Result<Vec<f64>> {
    omega
        .iter()
        .map(|n| {
            if n >= map.spec.len() {
                Err(Error::LinearIndexOutOfRange {
                    index: n,
                    len: map.spec.len(),
                })
            } else {
                map.get(n).ok_or(Error::Unoccupied { index: n })
            }
        })
        .collect()
}

/// Map holding `x[i]` at `omega[i]`; everything else unoccupied.
pub fn project(x: &[f64], omega: &OccupancySet, spec: GridSpec) -> Result<CellMap> {
    if x.len() != omega.len() {
        return Err(Error::LengthMismatch {
            expected: omega.len(),
            found: x.len(),
        });
    }
    let mut map = CellMap::empty(spec);
    for (n, &v) in omega.iter().zip(x) {
        if n >= spec.len() {
            return Err(Error::LinearIndexOutOfRange {
                index: n,
                len: spec.len(),
            });
        }
        map.set(n, v);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_index_examples() {
        let g = GridSpec::unit(2, 2).unwrap();
        assert_eq!(g.linear_index(0, 0).unwrap(), 0);
        assert_eq!(g.linear_index(1, 1).unwrap(), 3);
        let g = GridSpec::unit(5, 3).unwrap();
        assert_eq!(g.linear_index(2, 4).unwrap(), 14);
    }

    #[test]
    fn linear_index_rejects_out_of_range() {
        let g = GridSpec::unit(5, 3).unwrap();
        assert!(matches!(
            g.linear_index(3, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(g.linear_index(0, 5).is_err());
    }

    #[test]
    fn linear_index_is_bijective() {
        let g = GridSpec::unit(7, 4).unwrap();
        let mut seen = vec![false; g.len()];
        for col in 0..g.n_x {
            for row in 0..g.n_y {
                let n = g.linear_index(row, col).unwrap();
                assert!(!seen[n]);
                seen[n] = true;
                assert_eq!(g.row_col(n), (row, col));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::new(0, 3, 0.1, [0.0, 0.0]).is_err());
        assert!(GridSpec::new(3, 3, 0.0, [0.0, 0.0]).is_err());
        assert!(GridSpec::new(3, 3, f64::NAN, [0.0, 0.0]).is_err());
    }

    #[test]
    fn world_to_cell_floors_and_drops_upper_boundary() {
        let g = GridSpec::new(4, 2, 0.5, [1.0, -1.0]).unwrap();
        assert_eq!(g.cell_of(1.0, -1.0), Some(0));
        assert_eq!(g.cell_of(1.74, -0.51), Some(g.linear_index(0, 1).unwrap()));
        assert_eq!(g.cell_of(2.99, -0.01), Some(g.linear_index(1, 3).unwrap()));
        assert_eq!(g.cell_of(3.0, -0.5), None);
        assert_eq!(g.cell_of(2.0, 0.0), None);
        assert_eq!(g.cell_of(0.99, -0.5), None);
    }

    #[test]
    fn sample_examples() {
        let g = GridSpec::unit(3, 1).unwrap();
        let m = CellMap::from_values(g, vec![7.0, 8.0, 9.0]).unwrap();
        let omega = OccupancySet::new(vec![0, 2], 3).unwrap();
        assert_eq!(sample(&m, &omega).unwrap(), vec![7.0, 9.0]);
        assert!(sample(&m, &OccupancySet::empty()).unwrap().is_empty());
        assert_eq!(sample(&m, &m.occupancy()).unwrap(), vec![7.0, 8.0, 9.0]);
    }

    #[test]
    fn sample_rejects_unoccupied() {
        let g = GridSpec::unit(3, 1).unwrap();
        let m = CellMap::from_parts(g, vec![7.0, 8.0, 9.0], vec![true, false, true]).unwrap();
        let omega = OccupancySet::new(vec![1], 3).unwrap();
        assert_eq!(sample(&m, &omega), Err(Error::Unoccupied { index: 1 }));
    }

    #[test]
    fn project_examples() {
        let g = GridSpec::unit(3, 1).unwrap();
        let omega = OccupancySet::new(vec![1], 3).unwrap();
        let m = project(&[5.0], &omega, g).unwrap();
        assert_eq!(m.values(), &[0.0, 5.0, 0.0]);
        assert_eq!(m.occupied_mask(), &[false, true, false]);

        let m = project(&[], &OccupancySet::empty(), g).unwrap();
        assert_eq!(m.values(), &[0.0; 3]);
        assert_eq!(m.occupied_count(), 0);

        assert!(matches!(
            project(&[1.0, 2.0], &omega, g),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn occupancy_set_validation() {
        assert!(OccupancySet::new(vec![0, 2, 2], 5).is_err());
        assert!(OccupancySet::new(vec![3, 1], 5).is_err());
        assert!(OccupancySet::new(vec![5], 5).is_err());
        let s = OccupancySet::from_unsorted(vec![4, 1, 4, 0], 5).unwrap();
        assert_eq!(s.as_slice(), &[0, 1, 4]);
    }

    #[test]
    fn set_algebra() {
        let a = OccupancySet::new(vec![1, 2], 10).unwrap();
        let b = OccupancySet::new(vec![2, 3], 10).unwrap();
        assert_eq!(a.union(&b).as_slice(), &[1, 2, 3]);
        assert_eq!(a.difference(&b).as_slice(), &[1]);
        assert!(a.is_subset(&a.union(&b)));
        assert!(!a.is_subset(&b));
    }

    #[test]
    fn unoccupied_values_are_zeroed() {
        let g = GridSpec::unit(2, 1).unwrap();
        let m = CellMap::from_parts(g, vec![3.0, f64::INFINITY], vec![true, false]).unwrap();
        assert_eq!(m.values(), &[3.0, 0.0]);
        assert_eq!(m.get(1), None);
    }
}
