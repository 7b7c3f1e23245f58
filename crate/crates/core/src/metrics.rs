//! Comparison of two embeddings of the same points through their pairwise
//! distances.
//!
//! The relative error of a pair `(i, j)` is
//! `|‖γ_i − γ_j‖ − ‖γ̃_i − γ̃_j‖| / ‖γ̃_i − γ̃_j‖` with `γ̃` the reference.

use ndarray::ArrayView2;
use rand::Rng as _;
use rayon::prelude::*;

use crate::diffusion::Embedding;
use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted, seeded_rng};

pub const DECILES: usize = 10;

/// What to do with pairs whose reference distance is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroDistance {
    #[default]
    Error,
    Exclude,
}

/// Per-pair relative errors in `i < j` lexicographic order, alongside the
/// reference distance of each pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairErrors {
    pub errors: Vec<f64>,
    pub reference_distances: Vec<f64>,
    pub excluded: usize,
}

fn check_pair(test: &ArrayView2<f64>, reference: &ArrayView2<f64>) -> Result<()> {
    if test.dim() != reference.dim() {
        return Err(Error::Shape(format!(
            "test embedding is {:?}, reference is {:?}",
            test.dim(),
            reference.dim()
        )));
    }
    if test.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "relative errors need at least two points".into(),
        ));
    }
    Ok(())
}

fn distance(x: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(x.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn pair_errors_raw(test: ArrayView2<f64>, reference: ArrayView2<f64>, zero: ZeroDistance) -> Result<PairErrors> {
    check_pair(&test, &reference)?;
    let n = test.nrows();
    let rows: Vec<Vec<(f64, f64)>> = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| (distance(&test, i, j), distance(&reference, i, j)))
                .collect()
        })
        .collect();
    let mut out = PairErrors {
        errors: Vec::with_capacity(n * (n - 1) / 2),
        reference_distances: Vec::with_capacity(n * (n - 1) / 2),
        excluded: 0,
    };
    for (i, row) in rows.into_iter().enumerate() {
        for (k, (dt, dr)) in row.into_iter().enumerate() {
            if dr == 0.0 {
                match zero {
                    ZeroDistance::Error => {
                        return Err(Error::ZeroReferenceDistance { i, j: i + 1 + k });
                    }
                    ZeroDistance::Exclude => {
                        out.excluded += 1;
                        continue;
                    }
                }
            }
            out.errors.push((dt - dr).abs() / dr);
            out.reference_distances.push(dr);
        }
    }
    if out.errors.is_empty() {
        return Err(Error::InvalidArgument("every pair was excluded".into()));
    }
    Ok(out)
}

pub fn pair_errors(test: &Embedding, reference: &Embedding, zero: ZeroDistance) -> Result<PairErrors> {
    pair_errors_raw(test.coords.view(), reference.coords.view(), zero)
}

/// Mean relative error of `test`'s pairwise distances against `reference`'s.
pub fn mre(test: &Embedding, reference: &Embedding) -> Result<f64> {
    mre_with(test, reference, ZeroDistance::Error)
}

pub fn mre_with(test: &Embedding, reference: &Embedding, zero: ZeroDistance) -> Result<f64> {
    Ok(mean(&pair_errors(test, reference, zero)?.errors))
}

/// Mean relative error within each decile of the reference distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DecileProfile {
    /// Decile 1 holds the closest pairs. An empty bucket reports 0.
    pub means: [f64; DECILES],
    pub counts: [usize; DECILES],
}

impl DecileProfile {
    pub fn from_pairs(pairs: &PairErrors) -> Self {
        let p = pairs.errors.len();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            pairs.reference_distances[a]
                .total_cmp(&pairs.reference_distances[b])
                .then(a.cmp(&b))
        });
        let mut sums = [0.0; DECILES];
        let mut counts = [0usize; DECILES];
        for (rank, &k) in order.iter().enumerate() {
            let bucket = rank * DECILES / p;
            sums[bucket] += pairs.errors[k];
            counts[bucket] += 1;
        }
        let mut means = [0.0; DECILES];
        for b in 0..DECILES {
            if counts[b] > 0 {
                means[b] = sums[b] / counts[b] as f64;
            }
        }
        Self { means, counts }
    }

    /// Count-weighted average of the bucket means, i.e. the global MRE.
    pub fn recombine(&self) -> f64 {
        let total: usize = self.counts.iter().sum();
        self.means
            .iter()
            .zip(&self.counts)
            .map(|(m, &c)| m * c as f64)
            .sum::<f64>()
            / total as f64
    }

    /// 1-based decile with the largest mean error (the first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for b in 1..DECILES {
            if self.means[b] > self.means[best] {
                best = b;
            }
        }
        best + 1
    }
}

pub fn mre_by_decile(test: &Embedding, reference: &Embedding) -> Result<DecileProfile> {
    Ok(DecileProfile::from_pairs(&pair_errors(
        test,
        reference,
        ZeroDistance::Error,
    )?))
}

/// Percentile bootstrap interval for the mean of `values`.
///
/// Each resample draws `values.len()` indices uniformly with replacement from
/// one seeded stream; the bounds are the `(1 − level)/2` and `(1 + level)/2`
/// type-7 quantiles of the resampled means.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("at least one resample is required".into()));
    }
    let n = values.len();
    let mut rng = seeded_rng(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&means, (1.0 - level) / 2.0),
        quantile_sorted(&means, (1.0 + level) / 2.0),
    ))
}
