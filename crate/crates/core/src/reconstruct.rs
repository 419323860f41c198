//! Dirichlet-constrained Poisson reconstruction.
//!
//! Cells of the boundary set are pinned to a reference perspective's values.
//! The remaining occupied cells solve `Phi x = b`, the minimizer of
//! `1/2 ||Phi x - b||^2`, found with Nesterov's accelerated gradient method
//! (momentum is reset whenever that objective rises). `Phi` is the Laplacian
//! of the occupancy graph restricted to the free cells and `b` is the
//! divergence of the fused field with the pinned neighbors moved to the right
//! hand side. Unoccupied neighbors contribute nothing to either side.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gradients::{divergence, gradient, gradient_magnitude, GradientField};
use crate::grid::{CellMap, GridSpec, OccupancySet};
use crate::perspectives::{PerspectiveKey, PerspectiveSet};
use crate::sum::{self, NeumaierSum};

/// Pinned cells and their values, taken from the reference perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub boundary: OccupancySet,
    /// Aligned with `boundary`.
    pub values: Vec<f64>,
    pub reference_key: PerspectiveKey,
}

impl BoundaryCondition {
    pub fn new(boundary: OccupancySet, values: Vec<f64>, reference_key: PerspectiveKey) -> Result<Self> {
        if boundary.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: boundary.len(),
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::param(
                "boundary values",
                alloc::format!("{v} lies outside [0, 255]"),
            ));
        }
        Ok(Self {
            boundary,
            values,
            reference_key,
        })
    }

    /// All occupied cells of `map` pinned to their values.
    pub fn from_map(map: &CellMap, reference_key: PerspectiveKey) -> Result<Self> {
        let (cells, values) = map.iter_occupied().unzip();
        Self::new(OccupancySet::new(cells, map.spec().len())?, values, reference_key)
    }

    fn mean(&self) -> f64 {
        self.values.iter().copied().collect::<NeumaierSum>().value() / self.values.len() as f64
    }
}

/// Descent direction of the iteration. Both reach the same minimizer when
/// every occupied component holds a pinned cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Descent {
    /// Gradient of the least-squares objective, `Phi^T (Phi x - b)`.
    /// Stable for `gamma <= 1/||Phi||^2`.
    LeastSquares,
    /// Gradient of the Dirichlet energy `1/2 x^T (-Phi) x + b^T x`, which is
    /// the negated residual. Stable for `gamma <= 1/||Phi||` and converges
    /// with the square root of the least-squares condition number.
    #[default]
    Energy,
}

impl Descent {
    /// Default step for the worst-case 5-point stencil.
    pub fn default_gamma(self) -> f64 {
        match self {
            Descent::LeastSquares => 1.0 / 64.0,
            Descent::Energy => 1.0 / 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionConfig {
    pub descent: Descent,
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop once `||s_t - s_{t-1}|| / ||s_{t-1}||` falls below this.
    pub rel_tol: f64,
    /// Range the free cells are clamped to after the iteration ends.
    pub clamp: Option<(f64, f64)>,
    /// Reset the momentum whenever the objective increases.
    pub restart: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            descent: Descent::Energy,
            gamma: Descent::Energy.default_gamma(),
            max_iters: 256,
            rel_tol: 1e-3,
            clamp: Some((0.0, 255.0)),
            restart: true,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", "must be positive and finite"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::param("rel_tol", "must lie in (0, 1)"));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return Err(Error::param("clamp", "lower bound exceeds upper bound"));
            }
        }
        Ok(())
    }
}

/// One row of the convergence log. Iteration 0 is the initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub rel_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub map: CellMap,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
    /// Free cells moved by the final clamp.
    pub clamped: usize,
    /// Occupied cells touching an occupied neighbor whose connecting
    /// gradient component is missing from the field (read as zero).
    pub missing_gradient_cells: usize,
    /// Free cells in occupancy components without any pinned cell. Their
    /// level is not determined by the boundary.
    pub floating_cells: usize,
    /// Momentum resets triggered by an objective increase.
    pub restarts: usize,
}

impl Reconstruction {
    pub fn iterations(&self) -> usize {
        self.log.last().map_or(0, |r| r.iteration)
    }

    pub fn final_objective(&self) -> f64 {
        self.log.last().map_or(0.0, |r| r.objective)
    }
}

/// Mean gradient magnitude over the cells where a perspective has any valid
/// component; zero for perspectives without one.
pub fn gradient_strength(map: &CellMap) -> f64 {
    let mag = gradient_magnitude(&gradient(map));
    let count = mag.occupied_count();
    if count == 0 {
        return 0.0;
    }
    mag.iter_occupied().map(|(_, v)| v).collect::<NeumaierSum>().value() / count as f64
}

/// Perspective with the strongest mean gradient; ties go to the smaller key.
pub fn choose_reference(set: &PerspectiveSet) -> Result<PerspectiveKey> {
    let mut best: Option<(PerspectiveKey, f64)> = None;
    for (key, map) in set.maps() {
        let score = gradient_strength(map);
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((*key, score));
        }
    }
    best.map(|(k, _)| k)
        .ok_or(Error::Empty("no perspectives to choose a reference from"))
}

/// Pins the cells of `reference` whose value falls in the most populated
/// histogram bin. Bins are `bin_width` wide over `[0, 255]`; ties go to the
/// lower bin.
pub fn boundary_set(key: PerspectiveKey, reference: &CellMap, bin_width: f64) -> Result<BoundaryCondition> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::param("bin_width", "must be positive and finite"));
    }
    if reference.occupied_count() == 0 {
        return Err(Error::Empty("reference map has no occupied cells"));
    }
    let last = libm::floor(255.0 / bin_width) as i64;
    let bin = |v: f64| (libm::floor(v / bin_width) as i64).clamp(0, last);
    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    for (_, v) in reference.iter_occupied() {
        *hist.entry(bin(v)).or_default() += 1;
    }
    let mut modal = (0, 0);
    for (&b, &count) in &hist {
        if count > modal.1 {
            modal = (b, count);
        }
    }
    let (cells, values) = reference
        .iter_occupied()
        .filter(|&(_, v)| bin(v) == modal.0)
        .unzip();
    BoundaryCondition::new(OccupancySet::new(cells, reference.spec().len())?, values, key)
}

/// Laplacian of the occupancy graph restricted to the free cells.
struct FreeLaplacian {
    /// Positions of up to four free neighbors, `u32::MAX` for none.
    neighbors: Vec<[u32; 4]>,
    degree: Vec<f64>,
}

impl FreeLaplacian {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = -self.degree[i] * x[i];
            for &j in &self.neighbors[i] {
                if j != u32::MAX {
                    acc += x[j as usize];
                }
            }
            *o = acc;
        }
    }

    /// Largest absolute row sum, an upper bound on the operator norm.
    fn row_sum_bound(&self) -> f64 {
        self.degree.iter().fold(0.0, |m, &d| m.max(2.0 * d))
    }
}

fn free_components_without_boundary(
    spec: &GridSpec,
    occupied: &[bool],
    pinned: &[bool],
) -> usize {
    let mut seen = vec![false; spec.len()];
    let mut floating = 0;
    let mut stack = Vec::new();
    for start in 0..spec.len() {
        if !occupied[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        let mut anchored = false;
        while let Some(n) = stack.pop() {
            size += 1;
            anchored |= pinned[n];
            for m in spec.neighbors(n) {
                if occupied[m] && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        if !anchored {
            floating += size;
        }
    }
    floating
}

/// Reconstructs the map over `omega_all` from the fused field `g` with the
/// boundary cells pinned.
pub fn poisson_reconstruct(
    g: &GradientField,
    bc: &BoundaryCondition,
    omega_all: &OccupancySet,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let spec = *g.spec();
    let len = spec.len();
    if let Some(&last) = omega_all.as_slice().last() {
        if last >= len {
            return Err(Error::LinearIndexOutOfRange { index: last, len });
        }
    }
    if !bc.boundary.is_subset(omega_all) {
        return Err(Error::param("boundary", "must be a subset of the occupancy"));
    }
    if bc.boundary.len() != bc.values.len() {
        return Err(Error::LengthMismatch {
            expected: bc.boundary.len(),
            found: bc.values.len(),
        });
    }

    let occupied = omega_all.to_mask(len);
    let mut pinned = vec![false; len];
    let mut full = vec![0.0; len];
    for (n, &v) in bc.boundary.iter().zip(&bc.values) {
        pinned[n] = true;
        full[n] = v;
    }

    let missing_gradient_cells = (0..len)
        .filter(|&n| occupied[n])
        .filter(|&n| {
            let (row, col) = spec.row_col(n);
            let right = col + 1 < spec.n_x && occupied[n + spec.n_y] && !g.valid_x()[n];
            let down = row + 1 < spec.n_y && occupied[n + 1] && !g.valid_y()[n];
            let left = col > 0 && occupied[n - spec.n_y] && !g.valid_x()[n - spec.n_y];
            let up = row > 0 && occupied[n - 1] && !g.valid_y()[n - 1];
            right || down || left || up
        })
        .count();
    if missing_gradient_cells > 0 {
        log::warn!("{missing_gradient_cells} occupied cells miss a gradient component; read as zero");
    }

    let free: Vec<usize> = omega_all.iter().filter(|&n| !pinned[n]).collect();
    let map_of = |values: Vec<f64>| CellMap::from_parts(spec, values, occupied.clone());
    if free.is_empty() {
        return Ok(Reconstruction {
            map: map_of(full)?,
            log: Vec::new(),
            converged: true,
            clamped: 0,
            missing_gradient_cells,
            floating_cells: 0,
            restarts: 0,
        });
    }
    if bc.boundary.is_empty() {
        return Err(Error::Empty("boundary set"));
    }
    let floating_cells = free_components_without_boundary(&spec, &occupied, &pinned);
    if floating_cells > 0 {
        log::warn!("{floating_cells} cells are not connected to any pinned cell");
    }

    let mut position = vec![u32::MAX; len];
    for (i, &n) in free.iter().enumerate() {
        position[n] = i as u32;
    }
    let div = divergence(g);
    let mut neighbors = Vec::with_capacity(free.len());
    let mut degree = Vec::with_capacity(free.len());
    let mut b = Vec::with_capacity(free.len());
    for &n in &free {
        let mut slots = [u32::MAX; 4];
        let mut deg = 0usize;
        let mut pinned_sum = NeumaierSum::new();
        let mut k = 0;
        for m in spec.neighbors(n).filter(|&m| occupied[m]) {
            deg += 1;
            if pinned[m] {
                pinned_sum.add(full[m]);
            } else {
                slots[k] = position[m];
                k += 1;
            }
        }
        neighbors.push(slots);
        degree.push(deg as f64);
        b.push(div[n] - pinned_sum.value());
    }
    let phi = FreeLaplacian { neighbors, degree };

    let norm_bound = phi.row_sum_bound();
    let lipschitz = match cfg.descent {
        Descent::LeastSquares => norm_bound * norm_bound,
        Descent::Energy => norm_bound,
    };
    if lipschitz > 0.0 && cfg.gamma > 1.0 / lipschitz {
        return Err(Error::UnstableStep {
            gamma: cfg.gamma,
            bound: 1.0 / lipschitz,
        });
    }

    let dim = free.len();
    let residual = |x: &[f64], out: &mut [f64]| {
        phi.apply(x, out);
        for (o, bi) in out.iter_mut().zip(&b) {
            *o -= bi;
        }
    };
    let objective = |r: &[f64]| 0.5 * sum::dot(r, r);

    let mut s = vec![bc.mean(); dim];
    let mut y = s.clone();
    let mut r_s = vec![0.0; dim];
    residual(&s, &mut r_s);
    let mut r_y = r_s.clone();
    let mut grad = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut r_next = vec![0.0; dim];
    let mut log = vec![IterationRecord {
        iteration: 0,
        objective: objective(&r_s),
        rel_step: f64::NAN,
    }];
    let mut q = 1.0;
    let mut restarts = 0;
    let mut converged = false;
    for iter in 1..=cfg.max_iters {
        match cfg.descent {
            Descent::LeastSquares => phi.apply(&r_y, &mut grad),
            Descent::Energy => {
                for (g, r) in grad.iter_mut().zip(&r_y) {
                    *g = -r;
                }
            }
        }
        for i in 0..dim {
            next[i] = y[i] - cfg.gamma * grad[i];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "poisson reconstruction",
                iteration: iter,
            });
        }
        residual(&next, &mut r_next);
        let value = objective(&r_next);
        let previous = log.last().map_or(f64::INFINITY, |r| r.objective);
        let (q_next, beta) = if cfg.restart && value > previous {
            restarts += 1;
            (1.0, 0.0)
        } else {
            let q_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * q * q));
            (q_next, (q - 1.0) / q_next)
        };
        let mut step = NeumaierSum::new();
        for i in 0..dim {
            let d = next[i] - s[i];
            step.add(d * d);
            y[i] = next[i] + beta * d;
            r_y[i] = r_next[i] + beta * (r_next[i] - r_s[i]);
        }
        let base = sum::norm2(&s);
        let rel_step = if base > 0.0 {
            libm::sqrt(step.value()) / base
        } else {
            libm::sqrt(step.value())
        };
        q = q_next;
        core::mem::swap(&mut s, &mut next);
        core::mem::swap(&mut r_s, &mut r_next);
        log.push(IterationRecord {
            iteration: iter,
            objective: value,
            rel_step,
        });
        if rel_step < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    let mut clamped = 0;
    for (&n, &v) in free.iter().zip(&s) {
        full[n] = match cfg.clamp {
            Some((lo, hi)) if v < lo || v > hi => {
                clamped += 1;
                v.clamp(lo, hi)
            }
            _ => v,
        };
    }
    if clamped > 0 {
        log::info!("clamped {clamped} reconstructed cells");
    }
    Ok(Reconstruction {
        map: map_of(full)?,
        log,
        converged,
        clamped,
        missing_gradient_cells,
        floating_cells,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn key(b: u32) -> PerspectiveKey {
        PerspectiveKey::new(b, 0, 0)
    }

    #[test]
    fn modal_bin_is_pinned() {
        let spec = GridSpec::unit(5, 1).unwrap();
        let map = CellMap::from_values(spec, vec![25.0, 80.0, 25.0, 81.0, 25.0]).unwrap();
        let bc = boundary_set(key(0), &map, 1.0).unwrap();
        assert_eq!(bc.boundary.as_slice(), &[0, 2, 4]);
        assert_eq!(bc.values, vec![25.0; 3]);
    }

    #[test]
    fn modal_tie_goes_to_lower_bin() {
        let spec = GridSpec::unit(6, 1).unwrap();
        let map = CellMap::from_values(spec, vec![90.0, 10.0, 90.0, 10.0, 90.0, 10.0]).unwrap();
        let bc = boundary_set(key(0), &map, 1.0).unwrap();
        assert_eq!(bc.values, vec![10.0; 3]);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let spec = GridSpec::unit(2, 2).unwrap();
        assert!(boundary_set(key(0), &CellMap::empty(spec), 1.0).is_err());
    }

    #[test]
    fn constant_reference_pins_everything() {
        let spec = GridSpec::unit(4, 3).unwrap();
        let map = CellMap::from_values(spec, vec![42.0; 12]).unwrap();
        let bc = boundary_set(key(3), &map, 1.0).unwrap();
        assert_eq!(bc.boundary.len(), 12);
        let rec = poisson_reconstruct(
            &gradient(&map),
            &bc,
            &map.occupancy(),
            &ReconstructionConfig::default(),
        )
        .unwrap();
        assert_eq!(rec.map, map);
        assert_eq!(rec.iterations(), 0);
    }

    #[test]
    fn harmonic_constant() {
        let spec = GridSpec::unit(8, 8).unwrap();
        let border: Vec<usize> = (0..spec.len())
            .filter(|&n| {
                let (r, c) = spec.row_col(n);
                r == 0 || c == 0 || r == 7 || c == 7
            })
            .collect();
        let bc = BoundaryCondition::new(
            OccupancySet::new(border.clone(), spec.len()).unwrap(),
            vec![37.5; border.len()],
            key(0),
        )
        .unwrap();
        let omega = OccupancySet::new((0..spec.len()).collect(), spec.len()).unwrap();
        let rec = poisson_reconstruct(
            &GradientField::empty(spec),
            &bc,
            &omega,
            &ReconstructionConfig::default(),
        )
        .unwrap();
        assert!(rec.map.values().iter().all(|&v| v == 37.5));
    }

    #[test]
    fn oversized_step_is_rejected() {
        let spec = GridSpec::unit(4, 4).unwrap();
        let omega = OccupancySet::new((0..16).collect(), 16).unwrap();
        let bc = BoundaryCondition::new(OccupancySet::new(vec![0], 16).unwrap(), vec![1.0], key(0)).unwrap();
        let cfg = ReconstructionConfig {
            gamma: 0.2,
            ..ReconstructionConfig::default()
        };
        assert!(matches!(
            poisson_reconstruct(&GradientField::empty(spec), &bc, &omega, &cfg),
            Err(Error::UnstableStep { .. })
        ));
    }

    #[test]
    fn boundary_outside_domain_is_rejected() {
        let spec = GridSpec::unit(3, 1).unwrap();
        let omega = OccupancySet::new(vec![0, 1], 3).unwrap();
        let bc = BoundaryCondition::new(OccupancySet::new(vec![2], 3).unwrap(), vec![1.0], key(0)).unwrap();
        assert!(poisson_reconstruct(&GradientField::empty(spec), &bc, &omega, &ReconstructionConfig::default()).is_err());
    }

    #[test]
    fn reference_prefers_stronger_gradients_then_smaller_key() {
        let spec = GridSpec::unit(3, 1).unwrap();
        let weak = CellMap::from_values(spec, vec![0.0, 1.0, 2.0]).unwrap();
        let strong = CellMap::from_values(spec, vec![0.0, 2.0, 4.0]).unwrap();
        let set = PerspectiveSet::from_maps(spec, [(key(0), weak.clone()), (key(1), strong)]).unwrap();
        assert_eq!(choose_reference(&set).unwrap(), key(1));
        let set = PerspectiveSet::from_maps(spec, [(key(4), weak.clone()), (key(2), weak)]).unwrap();
        assert_eq!(choose_reference(&set).unwrap(), key(2));
        assert!(choose_reference(&PerspectiveSet::new(spec)).is_err());
    }
}
