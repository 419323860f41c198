//! Multi-threaded pose search. Results match the sequential search exactly.

use rayon::prelude::*;
use reflectmap_core::localize::{best_candidate, candidates, evaluate_pose, Pose, Registration, SearchWindow};
use reflectmap_core::CellMap;

use crate::error::{Error, Result};

/// Scores every candidate pose in parallel; poses without overlap score NaN.
pub fn score_surface(prior: &CellMap, local: &CellMap, window: &SearchWindow, bins: usize) -> Result<Vec<(Pose, f64)>> {
    if bins < 2 {
        return Err(reflectmap_core::Error::param("bins", "need at least 2 bins").into());
    }
    Ok(candidates(window)?
        .into_par_iter()
        .map(|p| (p, evaluate_pose(prior, local, &p, bins).unwrap_or(f64::NAN)))
        .collect())
}

pub fn register(prior: &CellMap, local: &CellMap, window: &SearchWindow, bins: usize) -> Result<(Registration, Vec<(Pose, f64)>)> {
    let scores = score_surface(prior, local, window, bins)?;
    let best = best_candidate(&scores).map_err(Error::from)?;
    Ok((best, scores))
}

/// Runs `f` on a pool of `jobs` workers, or rayon's default when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("thread pool: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use reflectmap_core::GridSpec;

    #[test]
    fn parallel_surface_matches_sequential() {
        let spec = GridSpec::new(40, 40, 0.1, [0.0, 0.0]).unwrap();
        let prior = CellMap::from_values(spec, (0..spec.len()).map(|n| ((n * 7919) % 251) as f64).collect()).unwrap();
        let lspec = GridSpec::new(20, 20, 0.1, [1.0, 1.0]).unwrap();
        let local = CellMap::from_values(lspec, (0..lspec.len()).map(|n| ((n * 31) % 97) as f64).collect()).unwrap();
        let window = SearchWindow {
            dx_range: 0.3,
            dy_range: 0.3,
            heading_range: 0.02,
            dx_step: 0.1,
            dy_step: 0.1,
            heading_step: 0.01,
        };
        let par = with_jobs(Some(3), || score_surface(&prior, &local, &window, 16)).unwrap().unwrap();
        let seq = reflectmap_core::localize::score_surface(&prior, &local, &window, 16).unwrap();
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }
}
