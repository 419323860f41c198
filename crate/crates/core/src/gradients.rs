//! Occupancy-aware forward differences, the 5-point Laplacian, and the
//! divergence that turns a gradient field into a Poisson right-hand side.
//!
//! A gradient component is valid only when both cells it connects are
//! occupied. Invalid components count as zero wherever they are summed.
//!
//! `divergence` is the negative adjoint of `gradient`:
//! `<gradient(x), g> = -<x, divergence(g)>`, and on a fully occupied map
//! `divergence(gradient(x)) == laplacian(x)` at every cell, with border cells
//! using the reduced stencil `-deg(n) x_n + sum of existing neighbors`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{CellMap, GridSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    spec: GridSpec,
    gx: Vec<f64>,
    gy: Vec<f64>,
    valid_x: Vec<bool>,
    valid_y: Vec<bool>,
}

impl GradientField {
    /// Field with every component invalid.
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.len();
        Self {
            spec,
            gx: vec![0.0; n],
            gy: vec![0.0; n],
            valid_x: vec![false; n],
            valid_y: vec![false; n],
        }
    }

    /// Components marked valid across the grid edge (last column for x, last
    /// row for y) are rejected. Invalid entries are zeroed.
    pub fn from_parts(
        spec: GridSpec,
        mut gx: Vec<f64>,
        mut gy: Vec<f64>,
        valid_x: Vec<bool>,
        valid_y: Vec<bool>,
    ) -> Result<Self> {
        let len = spec.len();
        for found in [gx.len(), gy.len(), valid_x.len(), valid_y.len()] {
            if found != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    found,
                });
            }
        }
        for n in 0..len {
            let (row, col) = spec.row_col(n);
            if valid_x[n] && col + 1 == spec.n_x {
                return Err(Error::param("valid_x", "set on the last column"));
            }
            if valid_y[n] && row + 1 == spec.n_y {
                return Err(Error::param("valid_y", "set on the last row"));
            }
            if !valid_x[n] {
                gx[n] = 0.0;
            }
            if !valid_y[n] {
                gy[n] = 0.0;
            }
        }
        Ok(Self {
            spec,
            gx,
            gy,
            valid_x,
            valid_y,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Horizontal differences; zero where invalid.
    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    /// Vertical differences; zero where invalid.
    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn valid_x(&self) -> &[bool] {
        &self.valid_x
    }

    pub fn valid_y(&self) -> &[bool] {
        &self.valid_y
    }

    pub fn x(&self, n: usize) -> Option<f64> {
        self.valid_x[n].then(|| self.gx[n])
    }

    pub fn y(&self, n: usize) -> Option<f64> {
        self.valid_y[n].then(|| self.gy[n])
    }

    pub fn component(&self, axis: Axis) -> (&[f64], &[bool]) {
        match axis {
            Axis::X => (&self.gx, &self.valid_x),
            Axis::Y => (&self.gy, &self.valid_y),
        }
    }

    /// Replaces one component's values, keeping validity. Entries at invalid
    /// positions are ignored.
    pub fn with_component(mut self, axis: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.spec.len() {
            return Err(Error::LengthMismatch {
                expected: self.spec.len(),
                found: values.len(),
            });
        }
        let (dst, valid) = match axis {
            Axis::X => (&mut self.gx, &self.valid_x),
            Axis::Y => (&mut self.gy, &self.valid_y),
        };
        for ((d, v), &ok) in dst.iter_mut().zip(values).zip(valid.iter()) {
            *d = if ok { v } else { 0.0 };
        }
        Ok(self)
    }

    pub fn valid_count(&self) -> usize {
        self.valid_x.iter().filter(|&&v| v).count() + self.valid_y.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Forward differences over occupied neighbor pairs.
pub fn gradient(map: &CellMap) -> GradientField {
    let spec = *map.spec();
    let mut field = GradientField::empty(spec);
    let values = map.values();
    for n in 0..spec.len() {
        if !map.is_occupied(n) {
            continue;
        }
        let (row, col) = spec.row_col(n);
        if col + 1 < spec.n_x && map.is_occupied(n + spec.n_y) {
            field.gx[n] = values[n + spec.n_y] - values[n];
            field.valid_x[n] = true;
        }
        if row + 1 < spec.n_y && map.is_occupied(n + 1) {
            field.gy[n] = values[n + 1] - values[n];
            field.valid_y[n] = true;
        }
    }
    field
}

/// 5-point Laplacian on the full grid, reduced stencil at the grid border.
pub fn laplacian(x: &[f64], spec: &GridSpec) -> Result<Vec<f64>> {
    if x.len() != spec.len() {
        return Err(Error::LengthMismatch {
            expected: spec.len(),
            found: x.len(),
        });
    }
    Ok((0..spec.len())
        .map(|n| {
            let mut acc = 0.0;
            let mut deg = 0.0;
            for m in spec.neighbors(n) {
                acc += x[m];
                deg += 1.0;
            }
            acc - deg * x[n]
        })
        .collect())
}

/// Laplacian of the graph induced by `domain`: only neighbors inside the
/// domain contribute, and the diagonal is minus their count. Cells outside
/// the domain map to zero. With a full domain this equals [`laplacian`].
pub fn domain_laplacian(x: &[f64], spec: &GridSpec, domain: &[bool]) -> Vec<f64> {
    (0..spec.len())
        .map(|n| {
            if !domain[n] {
                return 0.0;
            }
            let mut acc = 0.0;
            let mut deg = 0.0;
            for m in spec.neighbors(n).filter(|&m| domain[m]) {
                acc += x[m];
                deg += 1.0;
            }
            acc - deg * x[n]
        })
        .collect()
}

/// Backward-difference divergence, invalid components read as zero.
pub fn divergence(g: &GradientField) -> Vec<f64> {
    let spec = g.spec;
    (0..spec.len())
        .map(|n| {
            let (row, col) = spec.row_col(n);
            let mut d = g.gx[n] + g.gy[n];
            if col > 0 {
                d -= g.gx[n - spec.n_y];
            }
            if row > 0 {
                d -= g.gy[n - 1];
            }
            d
        })
        .collect()
}

/// Per-cell `sqrt(gx^2 + gy^2)`; a cell is occupied when either component
/// is valid, and an invalid component contributes zero.
pub fn gradient_magnitude(g: &GradientField) -> CellMap {
    let spec = g.spec;
    let mut map = CellMap::empty(spec);
    for n in 0..spec.len() {
        if g.valid_x[n] || g.valid_y[n] {
            map.set(n, libm::hypot(g.gx[n], g.gy[n]));
        }
    }
    map
}
