//! Seeded randomness and the nonparametric bootstrap.
//!
//! Every replicate draws from its own ChaCha stream selected by index, so
//! results do not depend on how replicates are scheduled across threads.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Generator for replicate `stream` under a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A master seed for replicate `index`, drawn from a reserved stream.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = stream_rng(seed, u64::MAX - 1);
    rng.set_word_pos(2 * index as u128);
    rng.random()
}

/// Sample rows with replacement within each group, keeping group sizes.
pub fn resample_within<R: Rng>(groups: &[Vec<usize>], rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(groups.iter().map(|g| g.len()).sum());
    for g in groups {
        for _ in 0..g.len() {
            out.push(g[rng.random_range(0..g.len())]);
        }
    }
    out
}

/// Sorted indices of a seeded subsample of size `cap`, or `None` when `n ≤ cap`.
pub fn subsample(n: usize, cap: usize, seed: u64) -> Option<Vec<usize>> {
    if n <= cap {
        return None;
    }
    let mut rng = stream_rng(seed, 0x5eed);
    let mut idx = sample(&mut rng, n, cap).into_vec();
    idx.sort_unstable();
    Some(idx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapSummary {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub successes: usize,
    /// Replicates whose estimator returned an error; they are left out.
    pub failures: usize,
}

/// Percentile intervals at `level` (e.g. 0.95) for a vector-valued estimator
/// evaluated on `b` stratified resamples.
pub fn bootstrap_percentile<F>(groups: &[Vec<usize>], b: usize, seed: u64, level: f64, estimator: F) -> Result<BootstrapSummary>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 replicates".into()));
    }
    let reps: Vec<Result<Vec<f64>>> = (0..b as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let idx = resample_within(groups, &mut rng);
            estimator(&idx)
        })
        .collect();
    let ok: Vec<Vec<f64>> = reps.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let failures = b - ok.len();
    if ok.len() < 2 {
        return Err(reps
            .into_iter()
            .find_map(|r| r.err())
            .unwrap_or(Error::InvalidArgument("fewer than two bootstrap replicates succeeded".into())));
    }
    let k = ok[0].len();
    let (a_lo, a_hi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut lo = Vec::with_capacity(k);
    let mut hi = Vec::with_capacity(k);
    for j in 0..k {
        // NaN marks a component the estimator could not produce in this replicate.
        let mut col: Vec<f64> = ok.iter().map(|v| v[j]).filter(|v| !v.is_nan()).collect();
        if col.len() < 2 {
            lo.push(f64::NAN);
            hi.push(f64::NAN);
            continue;
        }
        col.sort_by(f64::total_cmp);
        lo.push(quantile_sorted(&col, a_lo));
        hi.push(quantile_sorted(&col, a_hi));
    }
    Ok(BootstrapSummary {
        lo,
        hi,
        successes: ok.len(),
        failures,
    })
}
