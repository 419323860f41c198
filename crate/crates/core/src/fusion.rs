//! Gradient-domain fusion of map-perspectives.
//!
//! Each perspective contributes its forward-difference field. A sparse weight
//! vector is chosen by FISTA on
//!
//! ```text
//! 1/2 || sum_p |g_p| - sum_p w_p |g_p| ||^2  +  lambda ||w||_1
//! ```
//!
//! where `|g_p|` is the per-cell gradient magnitude of perspective `p`
//! (invalid components read as zero). Optionally each field is denoised by
//! soft-thresholding its components, and the result is the per-cell weighted
//! average over perspectives whose component is valid there.
//!
//! # Step and threshold
//!
//! A proximal step of size `s` with threshold `t` minimizes the composite
//! objective with `lambda = t / s`. When `tau` is configured, the effective
//! strength is `tau / gamma`; otherwise the threshold is coupled as
//! `gamma * lambda`. If `gamma` exceeds `1/L` for the fidelity's Lipschitz
//! constant `L`, the step is shortened and the threshold scaled with it so
//! the minimized objective does not change.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gradients::{gradient, gradient_magnitude, Axis, GradientField};
use crate::grid::GridSpec;
use crate::perspectives::{PerspectiveKey, PerspectiveSet};
use crate::sum::{self, NeumaierSum};

/// Gradient field per perspective, iterated in key order.
pub type GradientSet = BTreeMap<PerspectiveKey, GradientField>;

pub fn perspective_gradients(set: &PerspectiveSet) -> GradientSet {
    set.maps().map(|(k, m)| (*k, gradient(m))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Sparsity strength of the weight selection.
    pub lambda: f64,
    /// Selection step size.
    pub gamma: f64,
    /// Selection threshold per step. `None` couples it to `gamma * lambda`.
    pub tau: Option<f64>,
    pub max_iters: usize,
    /// Relative step below which the iteration stops.
    pub rel_tol: f64,
    pub denoise: bool,
    /// Denoising threshold per step; the shrinkage applied at convergence is
    /// `denoise_tau / denoise_gamma`.
    pub denoise_tau: f64,
    pub denoise_gamma: f64,
    pub denoise_max_iters: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 1.2e-3,
            gamma: 1e-3,
            tau: None,
            max_iters: 100,
            rel_tol: 1e-6,
            denoise: false,
            denoise_tau: 2.3,
            denoise_gamma: 1.0,
            denoise_max_iters: 100,
        }
    }
}

impl FusionConfig {
    /// Selection constants exactly as published: an independent threshold
    /// `tau = 2.3e-3` next to `lambda = 1.2e-3`, `gamma = 1e-3`.
    pub fn published() -> Self {
        Self {
            tau: Some(2.3e-3),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, "must be positive and finite"))
            }
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", "must be non-negative and finite"));
        }
        positive(self.gamma, "gamma")?;
        if let Some(tau) = self.tau {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::param("tau", "must be non-negative and finite"));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::param("rel_tol", "must be non-negative"));
        }
        if !(self.denoise_tau >= 0.0 && self.denoise_tau.is_finite()) {
            return Err(Error::param("denoise_tau", "must be non-negative and finite"));
        }
        positive(self.denoise_gamma, "denoise_gamma")?;
        if self.denoise_max_iters == 0 {
            return Err(Error::param("denoise_max_iters", "must be at least 1"));
        }
        Ok(())
    }

    /// Regularization strength the selection actually minimizes.
    pub fn effective_lambda(&self) -> f64 {
        match self.tau {
            Some(tau) => tau / self.gamma,
            None => self.lambda,
        }
    }

    /// Soft-threshold level the denoiser converges to.
    pub fn denoise_threshold(&self) -> f64 {
        self.denoise_tau / self.denoise_gamma
    }
}

/// One weight per perspective, in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<(PerspectiveKey, f64)>);

impl WeightVector {
    pub fn new(mut entries: Vec<(PerspectiveKey, f64)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::param("weights", "duplicate perspective key"));
        }
        Ok(Self(entries))
    }

    pub fn uniform<'a>(keys: impl IntoIterator<Item = &'a PerspectiveKey>) -> Self {
        let mut entries: Vec<_> = keys.into_iter().map(|&k| (k, 1.0)).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries.dedup_by(|a, b| a.0 == b.0);
        Self(entries)
    }

    pub fn get(&self, key: &PerspectiveKey) -> Option<f64> {
        self.0
            .binary_search_by(|(k, _)| k.cmp(key))
            .ok()
            .map(|i| self.0[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PerspectiveKey, f64)> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|(_, w)| *w != 0.0).count()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|&(_, w)| w).collect()
    }
}

#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    let m = libm::fabs(x) - tau;
    if m > 0.0 {
        libm::copysign(m, x)
    } else {
        0.0
    }
}

/// Element-wise `sgn(x) * max(|x| - tau, 0)`.
pub fn soft_threshold(x: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::param("tau", "threshold must be non-negative"));
    }
    Ok(x.iter().map(|&v| shrink(v, tau)).collect())
}

/// Accelerated proximal gradient for `f(x) + (threshold/step) ||x||_1`.
///
/// Returns the last proximal iterate and the number of iterations taken.
fn fista(
    x0: Vec<f64>,
    mut grad: impl FnMut(&[f64], &mut [f64]),
    step: f64,
    threshold: f64,
    max_iters: usize,
    rel_tol: f64,
    stage: &'static str,
) -> Result<(Vec<f64>, usize)> {
    let dim = x0.len();
    let mut prev = x0.clone();
    let mut y = x0;
    let mut g = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut q = 1.0;
    for iter in 1..=max_iters {
        grad(&y, &mut g);
        for i in 0..dim {
            next[i] = shrink(y[i] - step * g[i], threshold);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage,
                iteration: iter,
            });
        }
        let q_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * q * q));
        let beta = (q - 1.0) / q_next;
        let mut diff = NeumaierSum::new();
        for i in 0..dim {
            let d = next[i] - prev[i];
            diff.add(d * d);
            y[i] = next[i] + beta * d;
        }
        let base = sum::norm2(&prev);
        let step_norm = libm::sqrt(diff.value());
        q = q_next;
        core::mem::swap(&mut prev, &mut next);
        let converged = if base > 0.0 {
            step_norm / base < rel_tol
        } else {
            step_norm == 0.0
        };
        if converged {
            return Ok((prev, iter));
        }
    }
    Ok((prev, max_iters))
}

/// Outcome of sparse weight selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub weights: WeightVector,
    pub iterations: usize,
    /// Composite objective at the returned weights.
    pub objective: f64,
    /// Regularization strength that was minimized.
    pub lambda: f64,
    /// Step actually used.
    pub step: f64,
    /// Upper bound on the fidelity Hessian norm.
    pub lipschitz: f64,
}

/// Gram matrix of per-perspective magnitude vectors, row-major B x B.
fn magnitude_gram(grads: &GradientSet) -> Vec<f64> {
    let mags: Vec<Vec<f64>> = grads
        .values()
        .map(|g| gradient_magnitude(g).values().to_vec())
        .collect();
    let b = mags.len();
    let mut gram = vec![0.0; b * b];
    for i in 0..b {
        for j in i..b {
            let v = sum::dot(&mags[i], &mags[j]);
            gram[i * b + j] = v;
            gram[j * b + i] = v;
        }
    }
    gram
}

fn mat_vec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let b = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = sum::dot(&m[i * b..(i + 1) * b], x);
    }
}

/// Selects sparse fusion weights. Iteration starts from uniform weights.
pub fn select_weights(grads: &GradientSet, cfg: &FusionConfig) -> Result<Selection> {
    cfg.validate()?;
    if grads.is_empty() {
        return Err(Error::Empty("no perspectives to select from"));
    }
    if let Some(tau) = cfg.tau {
        let coupled = cfg.gamma * cfg.lambda;
        if libm::fabs(tau - coupled) > 1e-12 * coupled.max(tau) {
            log::warn!(
                "selection threshold tau={tau} differs from gamma*lambda={coupled}; \
                 minimizing with effective lambda={}",
                tau / cfg.gamma
            );
        }
    }
    let b = grads.len();
    let gram = magnitude_gram(grads);
    // D1(w) = 1/2 (1-w)^T G (1-w); grad = G (w - 1).
    let frobenius = libm::sqrt(gram.iter().map(|v| v * v).sum::<f64>());
    let lambda = cfg.effective_lambda();
    let step = if frobenius > 0.0 {
        cfg.gamma.min(1.0 / frobenius)
    } else {
        cfg.gamma
    };
    if step < cfg.gamma {
        log::info!("selection step shortened from {} to {step} (L <= {frobenius})", cfg.gamma);
    }
    let threshold = lambda * step;

    let mut shifted = vec![0.0; b];
    let (w, iterations) = fista(
        vec![1.0; b],
        |w, g| {
            for (s, &wi) in shifted.iter_mut().zip(w) {
                *s = wi - 1.0;
            }
            mat_vec(&gram, &shifted, g);
        },
        step,
        threshold,
        cfg.max_iters,
        cfg.rel_tol,
        "weight selection",
    )?;

    let objective_at = |w: &[f64]| -> f64 {
        let r: Vec<f64> = w.iter().map(|wi| 1.0 - wi).collect();
        let mut gr = vec![0.0; b];
        mat_vec(&gram, &r, &mut gr);
        0.5 * sum::dot(&r, &gr) + lambda * w.iter().map(|v| libm::fabs(*v)).sum::<f64>()
    };
    let objective = objective_at(&w);
    let reference = objective_at(&vec![0.0; b]).min(objective_at(&vec![1.0; b]));
    if objective > reference + 1e-9 * reference.max(1.0) {
        return Err(Error::NotConverged {
            stage: "weight selection",
            returned: objective,
            reference,
        });
    }

    let weights = WeightVector(grads.keys().copied().zip(w).collect());
    log::debug!(
        "selected {}/{} perspectives in {} iterations",
        weights.nonzero_count(),
        b,
        iterations
    );
    Ok(Selection {
        weights,
        iterations,
        objective,
        lambda,
        step,
        lipschitz: frobenius,
    })
}

/// Soft-threshold denoising of each component, solved by FISTA from the
/// input field. Invalid entries stay invalid.
pub fn denoise_gradient(g: &GradientField, cfg: &FusionConfig) -> Result<GradientField> {
    cfg.validate()?;
    // Identity fidelity: L = 1.
    let step = cfg.denoise_gamma.min(1.0);
    let threshold = cfg.denoise_threshold() * step;
    let mut out = g.clone();
    for axis in [Axis::X, Axis::Y] {
        let (values, valid) = g.component(axis);
        let observed: Vec<f64> = values
            .iter()
            .zip(valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
            .collect();
        let (denoised, _) = fista(
            observed.clone(),
            |s, grad| {
                for ((gr, &si), &yi) in grad.iter_mut().zip(s).zip(&observed) {
                    *gr = si - yi;
                }
            },
            step,
            threshold,
            cfg.denoise_max_iters,
            0.0,
            "gradient denoising",
        )?;
        let mut full = vec![0.0; values.len()];
        let mut it = denoised.into_iter();
        for (f, &ok) in full.iter_mut().zip(valid) {
            if ok {
                *f = it.next().unwrap_or(0.0);
            }
        }
        out = out.with_component(axis, full)?;
    }
    Ok(out)
}

/// Per-cell weighted average of the (optionally denoised) perspective
/// fields, normalized by the active weights at each cell.
pub fn fuse(grads: &GradientSet, w: &WeightVector, cfg: &FusionConfig) -> Result<GradientField> {
    let spec: GridSpec = match grads.values().next() {
        Some(g) => *g.spec(),
        None => return Err(Error::Empty("no perspectives to fuse")),
    };
    let mut weighted = Vec::with_capacity(grads.len());
    for (key, g) in grads {
        if *g.spec() != spec {
            return Err(Error::GridMismatch);
        }
        let weight = w.get(key).ok_or(Error::MissingWeight(*key))?;
        let field = if cfg.denoise {
            denoise_gradient(g, cfg)?
        } else {
            g.clone()
        };
        weighted.push((weight, field));
    }

    let len = spec.len();
    let mut comps: [(Vec<f64>, Vec<bool>); 2] = [
        (vec![0.0; len], vec![false; len]),
        (vec![0.0; len], vec![false; len]),
    ];
    for (c, axis) in [Axis::X, Axis::Y].into_iter().enumerate() {
        let (out, valid) = &mut comps[c];
        for n in 0..len {
            let mut num = NeumaierSum::new();
            let mut den = NeumaierSum::new();
            let mut any = false;
            for (weight, field) in &weighted {
                let (values, ok) = field.component(axis);
                if ok[n] {
                    num.add(weight * values[n]);
                    den.add(*weight);
                    any = true;
                }
            }
            let d = den.value();
            if any && d != 0.0 {
                out[n] = num.value() / d;
                valid[n] = true;
            }
        }
    }
    let [(gx, vx), (gy, vy)] = comps;
    GradientField::from_parts(spec, gx, gy, vx, vy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellMap;

    fn key(b: u32) -> PerspectiveKey {
        PerspectiveKey::new(b, 0, 0)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[5.0, -1.0, -5.0], 2.0).unwrap(), vec![3.0, 0.0, -3.0]);
        assert_eq!(soft_threshold(&[0.5], 0.0).unwrap(), vec![0.5]);
        assert!(soft_threshold(&[1.0], -0.1).is_err());
    }

    /// Single perspective whose magnitude vector has squared norm `norm_sq`.
    fn single(norm_sq: f64) -> GradientSet {
        let spec = GridSpec::unit(2, 1).unwrap();
        let map = CellMap::from_values(spec, vec![0.0, libm::sqrt(norm_sq)]).unwrap();
        let mut set = GradientSet::new();
        set.insert(key(0), gradient(&map));
        set
    }

    fn coupled(lambda: f64) -> FusionConfig {
        FusionConfig {
            lambda,
            gamma: 1.0,
            tau: None,
            max_iters: 500,
            ..FusionConfig::default()
        }
    }

    #[test]
    fn single_perspective_without_penalty_keeps_unit_weight() {
        let s = select_weights(&single(3.0), &coupled(0.0)).unwrap();
        assert_eq!(s.weights.values(), vec![1.0]);
    }

    #[test]
    fn single_perspective_closed_form() {
        // w* = max(1 - lambda/||a||^2, 0)
        let s = select_weights(&single(2.0), &coupled(1.0)).unwrap();
        assert!((s.weights.values()[0] - 0.5).abs() < 1e-12);
        let s = select_weights(&single(2.0), &coupled(2.0)).unwrap();
        assert!(s.weights.values()[0].abs() < 1e-12);
        let s = select_weights(&single(2.0), &coupled(7.5)).unwrap();
        assert_eq!(s.weights.values(), vec![0.0]);
    }

    #[test]
    fn empty_selection_is_an_error() {
        assert!(matches!(
            select_weights(&GradientSet::new(), &FusionConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn published_constants_minimize_tau_over_gamma() {
        let cfg = FusionConfig::published();
        assert!((cfg.effective_lambda() - 2.3).abs() < 1e-12);
        assert_eq!(FusionConfig::default().effective_lambda(), 1.2e-3);
    }

    #[test]
    fn fuse_mean_of_equal_fields() {
        let spec = GridSpec::unit(3, 3).unwrap();
        let values: Vec<f64> = (0..9).map(|n| (n * 7 % 5) as f64).collect();
        let g = gradient(&CellMap::from_values(spec, values).unwrap());
        let set: GradientSet = [(key(0), g.clone()), (key(1), g.clone())].into_iter().collect();
        let w = WeightVector::uniform(set.keys());
        assert_eq!(fuse(&set, &w, &FusionConfig::default()).unwrap(), g);
    }

    #[test]
    fn fuse_normalizes_by_active_weights() {
        let spec = GridSpec::unit(3, 1).unwrap();
        let a = CellMap::from_parts(spec, vec![1.0, 4.0, 0.0], vec![true, true, false]).unwrap();
        let b = CellMap::from_parts(spec, vec![0.0, 2.0, 9.0], vec![false, true, true]).unwrap();
        let set: GradientSet = [(key(0), gradient(&a)), (key(1), gradient(&b))]
            .into_iter()
            .collect();
        let w = WeightVector::new(vec![(key(0), 0.25), (key(1), 3.0)]).unwrap();
        let f = fuse(&set, &w, &FusionConfig::default()).unwrap();
        assert_eq!(f.x(0), Some(3.0));
        assert_eq!(f.x(1), Some(7.0));
    }

    #[test]
    fn zero_weight_deselects() {
        let spec = GridSpec::unit(3, 2).unwrap();
        let a = CellMap::from_values(spec, vec![1.0, 5.0, 2.0, 8.0, 3.0, 3.0]).unwrap();
        let b = CellMap::from_values(spec, vec![9.0, 0.0, 4.0, 4.0, 7.0, 1.0]).unwrap();
        let ga = gradient(&a);
        let set: GradientSet = [(key(0), ga.clone()), (key(1), gradient(&b))]
            .into_iter()
            .collect();
        let w = WeightVector::new(vec![(key(0), 1.0), (key(1), 0.0)]).unwrap();
        assert_eq!(fuse(&set, &w, &FusionConfig::default()).unwrap(), ga);
    }

    #[test]
    fn all_zero_weights_invalidate() {
        let spec = GridSpec::unit(2, 1).unwrap();
        let a = CellMap::from_values(spec, vec![1.0, 5.0]).unwrap();
        let set: GradientSet = [(key(0), gradient(&a))].into_iter().collect();
        let w = WeightVector::new(vec![(key(0), 0.0)]).unwrap();
        let f = fuse(&set, &w, &FusionConfig::default()).unwrap();
        assert_eq!(f.valid_count(), 0);
    }

    #[test]
    fn fuse_requires_every_weight() {
        let spec = GridSpec::unit(2, 1).unwrap();
        let a = CellMap::from_values(spec, vec![1.0, 5.0]).unwrap();
        let set: GradientSet = [(key(0), gradient(&a)), (key(1), gradient(&a))]
            .into_iter()
            .collect();
        let w = WeightVector::new(vec![(key(0), 1.0)]).unwrap();
        assert_eq!(
            fuse(&set, &w, &FusionConfig::default()),
            Err(Error::MissingWeight(key(1)))
        );
    }

    #[test]
    fn denoise_with_zero_threshold_is_identity() {
        let spec = GridSpec::unit(3, 3).unwrap();
        let g = gradient(&CellMap::from_values(spec, (0..9).map(|v| v as f64 * 1.7).collect()).unwrap());
        let cfg = FusionConfig {
            denoise_tau: 0.0,
            ..FusionConfig::default()
        };
        assert_eq!(denoise_gradient(&g, &cfg).unwrap(), g);
    }

    #[test]
    fn denoise_zeroes_small_entries() {
        let spec = GridSpec::unit(3, 3).unwrap();
        let g = gradient(&CellMap::from_values(spec, (0..9).map(|v| (v % 2) as f64).collect()).unwrap());
        let d = denoise_gradient(&g, &FusionConfig::default()).unwrap();
        assert!(d.gx().iter().chain(d.gy()).all(|&v| v == 0.0));
        assert_eq!(d.valid_x(), g.valid_x());
    }

    #[test]
    fn weight_vector_rejects_duplicates() {
        assert!(WeightVector::new(vec![(key(1), 1.0), (key(1), 2.0)]).is_err());
        let w = WeightVector::new(vec![(key(2), 0.0), (key(1), 2.0)]).unwrap();
        assert_eq!(w.get(&key(1)), Some(2.0));
        assert_eq!(w.nonzero_count(), 1);
    }
}
