//! Gaussian kernel, density normalization and the random walk built on top
//! of it.
//!
//! Matrices are dense. Row sums are always accumulated left to right over the
//! row, so results do not depend on how rows are distributed across threads.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// `min d_i(W) / max d_i(W)` below which the graph is reported as
/// numerically disconnected.
pub const CONDITIONING_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    /// Quantile of pairwise distances that produced `sigma`, if it was
    /// derived that way.
    pub q: Option<f64>,
    pub sigma: f64,
    pub alpha: f64,
    /// Diffusion time.
    pub t: u32,
}

impl KernelConfig {
    pub fn new(sigma: f64, alpha: f64, t: u32) -> Result<Self> {
        let cfg = Self {
            q: None,
            sigma,
            alpha,
            t,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Bandwidth chosen as the `q`-quantile of the pairwise distances of `data`.
    pub fn from_quantile(data: &DataMatrix, q: f64, alpha: f64, t: u32) -> Result<Self> {
        let sigma = bandwidth_from_quantile(data, q)?;
        let cfg = Self {
            q: Some(q),
            sigma,
            alpha,
            t,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be finite".into()));
        }
        if self.t == 0 {
            return Err(Error::InvalidArgument("diffusion time must be at least 1".into()));
        }
        if let Some(q) = self.q {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidArgument(format!("quantile {q} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphWarning {
    /// The smallest weighted degree is tiny relative to the largest; the
    /// graph is close to disconnected and the spectrum may be meaningless.
    IllConditioned { min_degree: f64, max_degree: f64 },
}

impl std::fmt::Display for GraphWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphWarning::IllConditioned { min_degree, max_degree } => write!(
                f,
                "graph is numerically disconnected: degree ratio {:e} (min {min_degree:e}, max {max_degree:e})",
                min_degree / max_degree
            ),
        }
    }
}

/// Every matrix derived from one sample and one [`KernelConfig`].
#[derive(Debug, Clone)]
pub struct KernelGraph {
    pub kernel: Array2<f64>,
    /// `K^(α)`, which is also the weight matrix `W`.
    pub kernel_alpha: Array2<f64>,
    pub deg_kernel: Array1<f64>,
    pub deg_weights: Array1<f64>,
    /// Row-stochastic transition matrix `P = D_W^-1 W`.
    pub transition: Array2<f64>,
    /// Stationary distribution of `transition`.
    pub pi: Array1<f64>,
    /// Symmetric conjugate `A = D_W^-1/2 W D_W^-1/2`.
    pub symmetric: Array2<f64>,
    pub warnings: Vec<GraphWarning>,
}

#[inline]
pub(crate) fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn gaussian(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / (2.0 * sigma * sigma)).exp()
}

/// One entry of `K^(α)` given the raw kernel value and both raw degrees.
#[inline]
pub(crate) fn alpha_entry(k: f64, deg_a: f64, deg_b: f64, alpha: f64) -> f64 {
    k / (deg_a.powf(alpha) * deg_b.powf(alpha))
}

pub fn pairwise_distances(data: &DataMatrix) -> Vec<f64> {
    let x = data.points();
    let n = x.nrows();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| squared_distance(x.row(i), x.row(j)).sqrt()))
        .collect()
}

pub fn bandwidth_from_quantile(data: &DataMatrix, q: f64) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(
            "bandwidth selection needs at least two points".into(),
        ));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1]")));
    }
    let mut d = pairwise_distances(data);
    d.par_sort_unstable_by(f64::total_cmp);
    let sigma = quantile_sorted(&d, q);
    if sigma > 0.0 {
        Ok(sigma)
    } else {
        Err(Error::ZeroBandwidth)
    }
}

pub fn gaussian_kernel(data: &DataMatrix, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    let x = data.points();
    let n = x.nrows();
    let mut k = Array2::zeros((n, n));
    k.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                row[j] = if i == j {
                    1.0
                } else {
                    // same operand order on both sides keeps K exactly symmetric
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    gaussian(squared_distance(x.row(a), x.row(b)), sigma)
                };
            }
        });
    Ok(k)
}

pub(crate) fn row_sums(m: &Array2<f64>) -> Array1<f64> {
    m.rows().into_iter().map(|r| r.iter().sum()).collect()
}

/// `D_K^-α K D_K^-α`, with degrees taken from the row sums of `k`.
pub fn alpha_normalize(k: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if k.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("kernel entries must be positive".into()));
    }
    let deg = row_sums(k);
    Ok(alpha_normalize_with(k, &deg, alpha))
}

fn alpha_normalize_with(k: &Array2<f64>, deg: &Array1<f64>, alpha: f64) -> Array2<f64> {
    Array2::from_shape_fn(k.dim(), |(i, j)| alpha_entry(k[[i, j]], deg[i], deg[j], alpha))
}

pub fn build_graph(data: &DataMatrix, config: &KernelConfig) -> Result<KernelGraph> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidArgument("a graph needs at least two points".into()));
    }
    let kernel = gaussian_kernel(data, config.sigma)?;
    let deg_kernel = row_sums(&kernel);
    let kernel_alpha = alpha_normalize_with(&kernel, &deg_kernel, config.alpha);
    let deg_weights = row_sums(&kernel_alpha);

    let total: f64 = deg_weights.iter().sum();
    let pi = deg_weights.mapv(|d| d / total);
    let transition = Array2::from_shape_fn(kernel_alpha.dim(), |(i, j)| kernel_alpha[[i, j]] / deg_weights[i]);
    let symmetric = Array2::from_shape_fn(kernel_alpha.dim(), |(i, j)| {
        kernel_alpha[[i, j]] / (deg_weights[i] * deg_weights[j]).sqrt()
    });

    let mut warnings = Vec::new();
    let min_degree = deg_weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max_degree = deg_weights.iter().copied().fold(0.0, f64::max);
    if !(min_degree / max_degree >= CONDITIONING_THRESHOLD) {
        warnings.push(GraphWarning::IllConditioned { min_degree, max_degree });
    }

    Ok(KernelGraph {
        kernel,
        kernel_alpha,
        deg_kernel,
        deg_weights,
        transition,
        pi,
        symmetric,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_helix, generate_swiss_roll};
    use ndarray::array;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> DataMatrix {
        DataMatrix::new(Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap(), None).unwrap()
    }

    fn max_abs(m: &Array2<f64>) -> f64 {
        m.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }

    #[test]
    fn quantile_bandwidth_hand_cases() {
        assert_eq!(bandwidth_from_quantile(&line(&[0.0, 2.0]), 1.0).unwrap(), 2.0);
        // distances 1, 2, 3
        assert_eq!(bandwidth_from_quantile(&line(&[0.0, 1.0, 3.0]), 0.5).unwrap(), 2.0);
        assert!(matches!(
            bandwidth_from_quantile(&line(&[4.0, 4.0, 4.0]), 0.5),
            Err(Error::ZeroBandwidth)
        ));
        assert!(bandwidth_from_quantile(&line(&[0.0, 1.0]), 0.0).is_err());
        assert!(bandwidth_from_quantile(&line(&[0.0]), 0.5).is_err());
    }

    #[test]
    fn kernel_values() {
        let k = gaussian_kernel(&line(&[0.0, 1.0]), 1.0).unwrap();
        assert_eq!(k[[0, 0]], 1.0);
        assert!((k[[0, 1]] - 0.606_530_659_7).abs() < 1e-10);
        assert_eq!(k[[0, 1]], k[[1, 0]]);
    }

    #[test]
    fn kernel_grows_with_bandwidth() {
        let data = line(&[0.0, 0.7, 2.0]);
        let mut prev = 0.0;
        for sigma in [0.5, 1.0, 5.0, 50.0, 5000.0] {
            let k = gaussian_kernel(&data, sigma).unwrap();
            assert!(k[[0, 2]] > prev);
            prev = k[[0, 2]];
        }
        assert!(1.0 - prev < 1e-6);
    }

    #[test]
    fn alpha_zero_is_identity() {
        let k = gaussian_kernel(&generate_helix(20, 1).unwrap(), 0.5).unwrap();
        assert_eq!(alpha_normalize(&k, 0.0).unwrap(), k);
    }

    #[test]
    fn alpha_one_two_by_two() {
        let a = 0.3;
        let k = array![[1.0, a], [a, 1.0]];
        let k1 = alpha_normalize(&k, 1.0).unwrap();
        assert!((k1[[0, 1]] - a / ((1.0 + a) * (1.0 + a))).abs() < 1e-15);
        assert!((k1[[0, 0]] - 1.0 / ((1.0 + a) * (1.0 + a))).abs() < 1e-15);
    }

    #[test]
    fn alpha_normalize_rejects_nonpositive() {
        assert!(alpha_normalize(&array![[1.0, 0.0], [0.0, 1.0]], 1.0).is_err());
    }

    #[test]
    fn two_point_graph_is_uniform() {
        let cfg = KernelConfig::new(1.0, 1.0, 1).unwrap();
        let g = build_graph(&line(&[0.0, 1.0]), &cfg).unwrap();
        assert!((g.pi[0] - 0.5).abs() < 1e-15 && (g.pi[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn density_normalization_changes_walk() {
        // clustered points on the left, sparse on the right
        let data = line(&[0.0, 0.05, 0.1, 0.12, 0.15, 1.0, 2.0, 3.0]);
        let p0 = build_graph(&data, &KernelConfig::new(0.7, 0.0, 1).unwrap()).unwrap();
        let p1 = build_graph(&data, &KernelConfig::new(0.7, 1.0, 1).unwrap()).unwrap();
        assert!(max_abs(&(&p0.transition - &p1.transition)) > 1e-3);
    }

    #[test]
    fn disconnected_graph_warns() {
        // The unit self-weight keeps degrees within a factor ~N³ of each
        // other for alpha in [0, 1]; a strong alpha on a tight cluster plus
        // an isolated point pushes the ratio below the threshold.
        let mut xs: Vec<f64> = (0..40).map(|k| k as f64 * 1e-3).collect();
        xs.push(1000.0);
        let g = build_graph(&line(&xs), &KernelConfig::new(1.0, 10.0, 1).unwrap()).unwrap();
        assert_eq!(g.warnings.len(), 1);
        let far = build_graph(&line(&[0.0, 0.1, 1000.0]), &KernelConfig::new(0.1, 0.0, 1).unwrap()).unwrap();
        assert!(far.warnings.is_empty());
        let ok = build_graph(
            &generate_helix(50, 1).unwrap(),
            &KernelConfig::new(0.5, 1.0, 1).unwrap(),
        )
        .unwrap();
        assert!(ok.warnings.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig::new(0.0, 1.0, 1).is_err());
        assert!(KernelConfig::new(1.0, 1.0, 0).is_err());
        assert!(KernelConfig::new(1.0, f64::NAN, 1).is_err());
    }

    fn check_graph(g: &KernelGraph) {
        let n = g.pi.len();
        for i in 0..n {
            assert_eq!(g.kernel[[i, i]], 1.0);
            let s: f64 = g.transition.row(i).sum();
            assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
        }
        assert!(g.kernel.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!((g.pi.sum() - 1.0).abs() <= 1e-12);
        assert!(max_abs(&(&g.symmetric - &g.symmetric.t())) <= 1e-12);
        let stationary = g.pi.dot(&g.transition);
        assert!((&stationary - &g.pi).iter().all(|d| d.abs() <= 1e-12));
        // A = Π^1/2 P Π^-1/2
        let s = g.pi.mapv(f64::sqrt);
        let via_pi = Array2::from_shape_fn(g.transition.dim(), |(i, j)| s[i] * g.transition[[i, j]] / s[j]);
        assert!(max_abs(&(&via_pi - &g.symmetric)) <= 1e-10);
        // A = D^1/2 P D^-1/2
        let d = g.deg_weights.mapv(f64::sqrt);
        let via_d = Array2::from_shape_fn(g.transition.dim(), |(i, j)| d[i] * g.transition[[i, j]] / d[j]);
        assert!(max_abs(&(&via_d - &g.symmetric)) <= 1e-10);
    }

    #[test]
    fn swiss_roll_graph_invariants() {
        let data = generate_swiss_roll(300, 4).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.05, 1.0, 10).unwrap();
        check_graph(&build_graph(&data, &cfg).unwrap());
    }

    #[test]
    fn graph_is_deterministic() {
        let data = generate_helix(120, 8).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.1, 0.5, 1).unwrap();
        let a = build_graph(&data, &cfg).unwrap();
        let b = build_graph(&data, &cfg).unwrap();
        assert_eq!(a.symmetric, b.symmetric);
        assert_eq!(a.pi, b.pi);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_graph_invariants(
            seed in 0u64..1000,
            n in 3usize..40,
            q in 0.05f64..1.0,
            alpha in 0.0f64..1.0,
        ) {
            use rand::Rng;
            let mut rng = crate::stats::seeded_rng(seed);
            let pts = Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>());
            let data = DataMatrix::new(pts, None).unwrap();
            let cfg = KernelConfig::from_quantile(&data, q, alpha, 1).unwrap();
            check_graph(&build_graph(&data, &cfg).unwrap());
        }

        #[test]
        fn alpha_normalize_preserves_symmetry(seed in 0u64..1000, n in 2usize..12, alpha in -1.0f64..2.0) {
            use rand::Rng;
            let mut rng = crate::stats::seeded_rng(seed);
            let mut k = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    let v = 0.01 + rng.gen::<f64>();
                    k[[i, j]] = v;
                    k[[j, i]] = v;
                }
            }
            let ka = alpha_normalize(&k, alpha).unwrap();
            prop_assert_eq!(ka.clone(), ka.t().to_owned());
        }
    }
}
