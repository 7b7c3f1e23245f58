//! Symmetric eigendecomposition, even matrix powers, and profile-likelihood
//! selection of the embedding dimension.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Absolute asymmetry tolerated by [`eig_symmetric`], scaled by
/// `max(1, max |a_ij|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Number of leading non-trivial eigenvalues fed to the likelihood curve.
pub const LIKELIHOOD_EIGENVALUES: usize = 25;

/// Pooled variance floor for the likelihood fit.
pub const VARIANCE_FLOOR: f64 = 1e-30;

/// Eigenpairs of a real symmetric matrix.
///
/// `values` are sorted in descending order and column `l` of `vectors` is the
/// unit eigenvector for `values[l]`. Each eigenvector is oriented so that its
/// largest-magnitude entry (the first one, on ties) is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigenSystem {
    /// `Φ diag(f(λ)) Φᵀ` over the columns in `cols`.
    pub fn reconstruct_with(&self, cols: std::ops::Range<usize>, f: impl Fn(f64) -> f64) -> Array2<f64> {
        let phi = self.vectors.slice(ndarray::s![.., cols.clone()]);
        let scale: Array1<f64> = self.values.slice(ndarray::s![cols]).mapv(f);
        let scaled = &phi * &scale;
        scaled.dot(&phi.t())
    }
}

fn max_asymmetry(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

pub fn eig_symmetric(a: &Array2<f64>) -> Result<EigenSystem> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("eigendecomposition of a {:?} matrix", a.dim())));
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Asymmetric(asym));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }

    let max_iter = 1000 * n.max(10);
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig =
        nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, max_iter).ok_or(Error::EigenNonConvergence(max_iter))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));

    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let norm = v.norm();
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[[i, col]] = sign * v[i] / norm;
        }
    }
    Ok(EigenSystem { values, vectors })
}

/// `A^(2t)` by binary exponentiation. The result is symmetrized.
pub fn matrix_power_even(a: &Array2<f64>, two_t: u32) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!("power of a {:?} matrix", a.dim())));
    }
    if two_t < 2 || two_t % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "exponent must be even and at least 2, got {two_t}"
        )));
    }
    let mut base = a.dot(a);
    let mut exp = two_t / 2;
    let mut acc: Option<Array2<f64>> = None;
    loop {
        if exp & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(r) => r.dot(&base),
            });
        }
        exp >>= 1;
        if exp == 0 {
            break;
        }
        base = base.dot(&base);
    }
    let r = acc.expect("exponent is positive");
    Ok(0.5 * (&r + &r.t()))
}

/// Outcome of the profile-likelihood dimension selector.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSelection {
    pub d: usize,
    /// `(d, log-likelihood)` for every candidate split.
    pub curve: Vec<(usize, f64)>,
}

/// Profile log-likelihood of splitting `x` after its first `d` entries into
/// two Gaussian groups with separate means and a pooled (maximum-likelihood)
/// variance.
fn split_log_likelihood(x: &[f64], d: usize) -> f64 {
    let n = x.len() as f64;
    let (head, tail) = x.split_at(d);
    let ss = |g: &[f64]| -> f64 {
        if g.is_empty() {
            return 0.0;
        }
        let m = g.iter().sum::<f64>() / g.len() as f64;
        g.iter().map(|v| (v - m) * (v - m)).sum()
    };
    let residual = ss(head) + ss(tail);
    let var = (residual / n).max(VARIANCE_FLOOR);
    -0.5 * n * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * residual / var
}

/// Chooses the embedding dimension from a descending spectrum that excludes
/// the trivial eigenvalue 1.
///
/// Eigenvalues are raised to `t` before fitting; candidates are
/// `d = 1..=max_d` and ties go to the smallest `d`.
pub fn select_dimension(values: &[f64], t: u32, max_d: usize) -> Result<DimensionSelection> {
    if values.len() < 3 {
        return Err(Error::TooFewEigenvalues(values.len()));
    }
    if max_d == 0 || max_d > values.len() {
        return Err(Error::InvalidArgument(format!(
            "max_d must be in 1..={}, got {max_d}",
            values.len()
        )));
    }
    let powered: Vec<f64> = values.iter().map(|v| v.powi(t as i32)).collect();
    let curve: Vec<(usize, f64)> = (1..=max_d).map(|d| (d, split_log_likelihood(&powered, d))).collect();
    let mut best = curve[0];
    for &c in &curve[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    Ok(DimensionSelection { d: best.0, curve })
}
