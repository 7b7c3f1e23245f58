//! Small order-statistic helpers shared by the bandwidth selector and the
//! bootstrap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every random stream in the crate is a ChaCha8 generator seeded through
/// `seed_from_u64`, which is portable across platforms and releases of
/// `rand_chacha`.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Empirical quantile of an ascending-sorted slice, interpolating linearly
/// between order statistics (Hyndman & Fan type 7, the numpy/R default).
///
/// Panics if `sorted` is empty or `p` lies outside `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
