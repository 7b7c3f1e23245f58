//! Out-of-sample extension of a fitted Diffusion Maps model.
//!
//! The extension keeps only what it needs from the model: the training
//! points, their raw and weighted degrees, the leading `d + 1` eigenvectors
//! of `A` and their eigenvalues. Kernel values against the training sample are
//! computed one new point at a time, so memory stays `O(M)` per point.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::dataset::DataMatrix;
use crate::diffusion::{DiffusionModel, Embedding};
use crate::error::{Error, Result};
use crate::kernel_graph::{alpha_entry, gaussian, squared_distance, KernelConfig};

/// Eigenvalues with magnitude below this cannot be used as Nyström divisors.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Which approximation of the extended eigenvectors to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtensionScaling {
    /// The `N/M → 0` limit: `u(x) = (1/λ) Σ_k Ã(x, x_k) u_k`, `λ` unchanged.
    #[default]
    Asymptotic,
    /// The finite-sample form, which multiplies extended eigenvectors by
    /// `√(M/(N+M))` and eigenvalues by `(N+M)/M` for `N` new points.
    Finite,
}

#[derive(Debug, Clone)]
pub struct NystromExtension {
    config: KernelConfig,
    train: Array2<f64>,
    deg_kernel: Array1<f64>,
    deg_weights: Array1<f64>,
    /// `M × (d+1)`: `φ_1 .. φ_{d+1}`.
    phi: Array2<f64>,
    lambdas: Array1<f64>,
    d: usize,
    scaling: ExtensionScaling,
}

/// Kernel quantities of one point against the training sample.
struct PointKernel {
    /// `Ã(x, x_k)` for every training point.
    a_row: Array1<f64>,
    deg_weights: f64,
}

impl NystromExtension {
    pub fn new(model: &DiffusionModel) -> Self {
        Self::with_scaling(model, ExtensionScaling::Asymptotic)
    }

    pub fn with_scaling(model: &DiffusionModel, scaling: ExtensionScaling) -> Self {
        let k = model.d + 1;
        Self {
            config: model.config,
            train: model.train.points().clone(),
            deg_kernel: model.graph.deg_kernel.clone(),
            deg_weights: model.graph.deg_weights.clone(),
            phi: model.eigen.vectors.slice(ndarray::s![.., ..k]).to_owned(),
            lambdas: model.eigen.values.slice(ndarray::s![..k]).to_owned(),
            d: model.d,
            scaling,
        }
    }

    pub fn train_len(&self) -> usize {
        self.train.nrows()
    }

    fn check_point(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.train.ncols() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, model expects {}",
                x.len(),
                self.train.ncols()
            )));
        }
        Ok(())
    }

    fn kernel_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.train
            .rows()
            .into_iter()
            .map(|xk| gaussian(squared_distance(x, xk), self.config.sigma))
            .collect()
    }

    /// `M · E_x[K(a, x)]`, i.e. the raw degree `a` would have in the training graph.
    fn raw_degree(&self, x: ArrayView1<f64>) -> f64 {
        self.kernel_row(x).sum()
    }

    fn point_kernel(&self, x: ArrayView1<f64>) -> PointKernel {
        let alpha = self.config.alpha;
        let k_row = self.kernel_row(x);
        let deg_k: f64 = k_row.iter().sum();
        let w_row: Array1<f64> = k_row
            .iter()
            .zip(self.deg_kernel.iter())
            .map(|(&k, &dk)| alpha_entry(k, deg_k, dk, alpha))
            .collect();
        let deg_w: f64 = w_row.iter().sum();
        let a_row = w_row
            .iter()
            .zip(self.deg_weights.iter())
            .map(|(&w, &dw)| w / (deg_w * dw).sqrt())
            .collect();
        PointKernel {
            a_row,
            deg_weights: deg_w,
        }
    }

    /// Approximation of `K^(α)(a, b)` from empirical means over the training
    /// sample. With `α = 0` this is the raw kernel.
    pub fn kernel_alpha_approx(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
        self.check_point(a)?;
        self.check_point(b)?;
        let k = gaussian(squared_distance(a, b), self.config.sigma);
        if self.config.alpha == 0.0 {
            return Ok(k);
        }
        // (1/M^2α) K / (E[K(a,·)]^α E[K(b,·)]^α) = K / (deg(a)^α deg(b)^α)
        Ok(alpha_entry(
            k,
            self.raw_degree(a),
            self.raw_degree(b),
            self.config.alpha,
        ))
    }

    /// Approximation of `A(a, b)` for arbitrary points. For two training
    /// points this reproduces the corresponding entry of `A`.
    pub fn a_approx(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
        self.check_point(a)?;
        self.check_point(b)?;
        let alpha = self.config.alpha;
        let (da, db) = (self.raw_degree(a), self.raw_degree(b));
        let k = gaussian(squared_distance(a, b), self.config.sigma);
        let w = alpha_entry(k, da, db, alpha);
        // (1/M) K̃ / √(E[K̃(a,·)] E[K̃(b,·)]) = K̃ / √(d_W(a) d_W(b))
        let wa = self.point_kernel(a).deg_weights;
        let wb = self.point_kernel(b).deg_weights;
        Ok(w / (wa * wb).sqrt())
    }

    fn check_eigenvalues(&self) -> Result<()> {
        for (index, &value) in self.lambdas.iter().enumerate() {
            if value.abs() < EIGENVALUE_FLOOR {
                return Err(Error::IllConditionedExtension { index, value });
            }
        }
        Ok(())
    }

    fn extend_rows(&self, points: &Array2<f64>) -> Array2<f64> {
        let k = self.d + 1;
        let mut out = Array2::zeros((points.nrows(), k));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(points.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut row, x)| {
                let pk = self.point_kernel(x);
                for l in 0..k {
                    row[l] = pk.a_row.dot(&self.phi.column(l)) / self.lambdas[l];
                }
            });
        out
    }

    /// Extended `φ_1 .. φ_{d+1}` at `points`, one row per point.
    pub fn extend_eigenvectors(&self, points: &DataMatrix) -> Result<Array2<f64>> {
        self.check_eigenvalues()?;
        if !points.is_empty() {
            self.check_point(points.points().row(0))?;
        }
        let mut out = self.extend_rows(points.points());
        if self.scaling == ExtensionScaling::Finite {
            let m = self.train_len() as f64;
            out *= (m / (m + points.len() as f64)).sqrt();
        }
        Ok(out)
    }

    /// Eigenvalue estimates that go with [`Self::extend_eigenvectors`] for
    /// `n_new` new points.
    pub fn extended_eigenvalues(&self, n_new: usize) -> Array1<f64> {
        match self.scaling {
            ExtensionScaling::Asymptotic => self.lambdas.clone(),
            ExtensionScaling::Finite => {
                let m = self.train_len() as f64;
                &self.lambdas * ((m + n_new as f64) / m)
            }
        }
    }

    /// Diffusion coordinates of new points, `λ_l^t φ_l(x) / φ_1(x)`, where
    /// the extended `φ_1` stands in for `√π(x)`.
    pub fn extend_embedding(&self, points: &DataMatrix) -> Result<Embedding> {
        self.check_eigenvalues()?;
        let t = self.config.t;
        let used = self.lambdas.slice(ndarray::s![1..]).to_owned();
        if points.is_empty() {
            return Ok(Embedding {
                coords: Array2::zeros((0, self.d)),
                t,
                eigenvalues_used: used,
            });
        }
        self.check_point(points.points().row(0))?;
        // the finite-sample prefactor cancels in the ratio, so use the raw form
        let ext = self.extend_rows(points.points());
        if let Some(bad) = ext.column(0).iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::ExtensionDomain(bad));
        }
        let scales = used.mapv(|l| l.powi(t as i32));
        let coords = Array2::from_shape_fn((points.len(), self.d), |(i, j)| {
            scales[j] * ext[[i, j + 1]] / ext[[i, 0]]
        });
        Ok(Embedding {
            coords,
            t,
            eigenvalues_used: used,
        })
    }
}
