//! Diffusion Maps: model fitting, embeddings, diffusion distances and the
//! Gram-matrix target used to train networks without an eigendecomposition.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::kernel_graph::{build_graph, GraphWarning, KernelConfig, KernelGraph};
use crate::spectral::{
    eig_symmetric, matrix_power_even, select_dimension, DimensionSelection, EigenSystem, LIKELIHOOD_EIGENVALUES,
};
use crate::stats::seeded_rng;
use crate::textio::{fmt_f64, write_reals, RecordReader};

const MODEL_MAGIC: &str = "ddm-diffusion-model";
const MODEL_VERSION: u32 = 1;

/// How the embedding dimension is chosen at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Maximize the profile likelihood of the leading eigenvalues.
    Auto,
    Fixed(usize),
}

/// Rows are points, columns are diffusion coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Array2<f64>,
    pub t: u32,
    /// `λ_2 .. λ_{d+1}`.
    pub eigenvalues_used: Array1<f64>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    /// Writes the coordinates as CSV (`psi1..psid`), with an optional label
    /// column for plotting.
    pub fn write_csv(&self, path: &Path, labels: Option<&Array1<f64>>) -> Result<()> {
        crate::dataset::write_table(path, &self.coords, labels, "psi")
    }
}

/// A Diffusion Maps model fit to a training sample.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub config: KernelConfig,
    pub train: DataMatrix,
    pub graph: KernelGraph,
    pub eigen: EigenSystem,
    pub d: usize,
    /// Likelihood curve over the leading eigenvalues, when the sample is
    /// large enough to compute one.
    pub selection: Option<DimensionSelection>,
}

impl PartialEq for DiffusionModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.train == other.train
            && self.graph.deg_kernel == other.graph.deg_kernel
            && self.graph.deg_weights == other.graph.deg_weights
            && self.graph.pi == other.graph.pi
            && self.eigen == other.eigen
            && self.d == other.d
            && self.selection == other.selection
    }
}

impl DiffusionModel {
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn pi(&self) -> &Array1<f64> {
        &self.graph.pi
    }

    pub fn warnings(&self) -> &[GraphWarning] {
        &self.graph.warnings
    }

    /// Right eigenvector `ψ_l = Π^-1/2 φ_l` of the transition matrix
    /// (`l` is zero-based, so `l = 0` is the constant vector).
    pub fn right_eigenvector(&self, l: usize) -> Array1<f64> {
        let phi = self.eigen.vectors.column(l);
        Array1::from_iter(phi.iter().zip(self.graph.pi.iter()).map(|(p, pi)| p / pi.sqrt()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::file(path, e))?;
        w.flush().map_err(|e| Error::file(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let m = self.len();
        let dim = self.train.dim();
        writeln!(w, "{MODEL_MAGIC} {MODEL_VERSION}")?;
        writeln!(
            w,
            "# reals use 17 significant digits; matrices are row-major, one row per line"
        )?;
        writeln!(w, "points {m}")?;
        writeln!(w, "input_dim {dim}")?;
        writeln!(w, "labels {}", u8::from(self.train.labels().is_some()))?;
        match self.config.q {
            Some(q) => writeln!(w, "q {}", fmt_f64(q))?,
            None => writeln!(w, "q none")?,
        }
        writeln!(w, "sigma {}", fmt_f64(self.config.sigma))?;
        writeln!(w, "alpha {}", fmt_f64(self.config.alpha))?;
        writeln!(w, "t {}", self.config.t)?;
        writeln!(w, "d {}", self.d)?;
        for row in self.train.points().rows() {
            write_reals(w, "x", row.iter().copied())?;
        }
        if let Some(labels) = self.train.labels() {
            write_reals(w, "label", labels.iter().copied())?;
        }
        write_reals(w, "deg_kernel", self.graph.deg_kernel.iter().copied())?;
        write_reals(w, "deg_weights", self.graph.deg_weights.iter().copied())?;
        write_reals(w, "pi", self.graph.pi.iter().copied())?;
        write_reals(w, "eigenvalues", self.eigen.values.iter().copied())?;
        for row in self.eigen.vectors.rows() {
            write_reals(w, "phi", row.iter().copied())?;
        }
        match &self.selection {
            None => writeln!(w, "likelihood 0")?,
            Some(sel) => {
                writeln!(w, "likelihood {} {}", sel.curve.len(), sel.d)?;
                for (d, ll) in &sel.curve {
                    writeln!(w, "ll {d} {}", fmt_f64(*ll))?;
                }
            }
        }
        Ok(())
    }

    /// Loads a model written by [`DiffusionModel::save`].
    ///
    /// The kernel graph is rebuilt from the stored sample and configuration;
    /// the stored degree vectors and `π` must match it bit for bit.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    fn read_from<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut r = RecordReader::new(reader, path);
        let header = r.expect(MODEL_MAGIC)?;
        if header.first().map(String::as_str) != Some("1") {
            return Err(r.error(2, format!("unsupported model version {header:?}")));
        }
        let m: usize = r.expect_one("points")?;
        let dim: usize = r.expect_one("input_dim")?;
        let has_labels: u8 = r.expect_one("labels")?;
        let q_field: String = r.expect_one("q")?;
        let q = if q_field == "none" {
            None
        } else {
            Some(r.parse::<f64>(&q_field, 2)?)
        };
        let sigma: f64 = r.expect_one("sigma")?;
        let alpha: f64 = r.expect_one("alpha")?;
        let t: u32 = r.expect_one("t")?;
        let d: usize = r.expect_one("d")?;

        let mut points = Array2::zeros((m, dim));
        for i in 0..m {
            let row = r.expect_reals("x", dim)?;
            points.row_mut(i).assign(&Array1::from(row));
        }
        let labels = if has_labels == 1 {
            Some(Array1::from(r.expect_reals("label", m)?))
        } else {
            None
        };
        let deg_kernel = Array1::from(r.expect_reals("deg_kernel", m)?);
        let deg_weights = Array1::from(r.expect_reals("deg_weights", m)?);
        let pi = Array1::from(r.expect_reals("pi", m)?);
        let values = Array1::from(r.expect_reals("eigenvalues", m)?);
        let mut vectors = Array2::zeros((m, m));
        for i in 0..m {
            let row = r.expect_reals("phi", m)?;
            vectors.row_mut(i).assign(&Array1::from(row));
        }
        let lk = r.expect("likelihood")?;
        let n_curve: usize = r.parse(lk.first().map(String::as_str).unwrap_or(""), 2)?;
        let selection = if n_curve == 0 {
            None
        } else {
            let chosen: usize = r.parse(lk.get(1).map(String::as_str).unwrap_or(""), 3)?;
            let mut curve = Vec::with_capacity(n_curve);
            for _ in 0..n_curve {
                let f = r.expect("ll")?;
                if f.len() != 2 {
                    return Err(r.error(2, "`ll` takes a dimension and a value"));
                }
                curve.push((r.parse(&f[0], 2)?, r.parse(&f[1], 3)?));
            }
            Some(DimensionSelection { d: chosen, curve })
        };

        let train = DataMatrix::new(points, labels)?;
        let config = KernelConfig { q, sigma, alpha, t };
        config.validate()?;
        let graph = build_graph(&train, &config)?;
        if graph.deg_kernel != deg_kernel || graph.deg_weights != deg_weights || graph.pi != pi {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                column: 0,
                msg: "stored degrees do not match the graph rebuilt from the stored sample".into(),
            });
        }
        if d == 0 || d >= m {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                column: 0,
                msg: format!("embedding dimension {d} out of range for {m} points"),
            });
        }
        Ok(Self {
            config,
            train,
            graph,
            eigen: EigenSystem { values, vectors },
            d,
            selection,
        })
    }
}

/// Likelihood-curve dimension selection over the leading non-trivial
/// eigenvalues of `eigen`.
pub fn likelihood_selection(eigen: &EigenSystem, t: u32) -> Result<DimensionSelection> {
    let m = eigen.values.len();
    let k = LIKELIHOOD_EIGENVALUES.min(m.saturating_sub(1));
    let values: Vec<f64> = eigen.values.iter().skip(1).take(k).copied().collect();
    select_dimension(&values, t, values.len().saturating_sub(1).max(1))
}

pub fn fit(data: &DataMatrix, config: &KernelConfig, dimension: Dimension) -> Result<DiffusionModel> {
    let m = data.len();
    if m < 3 {
        return Err(Error::InvalidArgument(format!(
            "Diffusion Maps needs at least 3 points, got {m}"
        )));
    }
    let graph = build_graph(data, config)?;
    let eigen = eig_symmetric(&graph.symmetric)?;
    let selection = likelihood_selection(&eigen, config.t).ok();
    let d = match dimension {
        Dimension::Fixed(d) if d >= 1 && d < m => d,
        Dimension::Fixed(d) => {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension {d} must be in 1..={}",
                m - 1
            )))
        }
        Dimension::Auto => match &selection {
            Some(s) => s.d,
            None => likelihood_selection(&eigen, config.t)?.d,
        },
    };
    Ok(DiffusionModel {
        config: *config,
        train: data.clone(),
        graph,
        eigen,
        d,
        selection,
    })
}

pub fn embed(model: &DiffusionModel) -> Embedding {
    embed_with_dimension(model, model.d)
}

/// Diffusion coordinates `λ_l^t φ_l / √π` for `l = 2..=d+1`.
///
/// Panics if `d >= M`.
pub fn embed_with_dimension(model: &DiffusionModel, d: usize) -> Embedding {
    let m = model.len();
    assert!(d < m, "embedding dimension {d} needs at least {} points", d + 1);
    let t = model.config.t;
    let lambdas: Array1<f64> = model.eigen.values.slice(ndarray::s![1..=d]).to_owned();
    let scales = lambdas.mapv(|l| l.powi(t as i32));
    let coords = Array2::from_shape_fn((m, d), |(k, j)| {
        scales[j] * model.eigen.vectors[[k, j + 1]] / model.graph.pi[k].sqrt()
    });
    Embedding {
        coords,
        t,
        eigenvalues_used: lambdas,
    }
}

/// Diffusion distances at a fixed time, computed from the rows of `P^t`
/// obtained by repeated multiplication. No eigenvectors are involved.
///
/// The rows are kept as `P^t − 1πᵀ = (P − 1πᵀ)^t`: subtracting the same
/// vector from every row leaves the distances unchanged, and it avoids the
/// cancellation between two rows that have both nearly converged to `π`.
#[derive(Debug, Clone)]
pub struct DiffusionDistances {
    deflated_t: Array2<f64>,
    inv_pi: Array1<f64>,
}

impl DiffusionDistances {
    pub fn new(graph: &KernelGraph, t: u32) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidArgument("diffusion time must be at least 1".into()));
        }
        let pi = &graph.pi;
        let q = Array2::from_shape_fn(graph.transition.dim(), |(i, j)| graph.transition[[i, j]] - pi[j]);
        let mut qt = q.clone();
        for _ in 1..t {
            qt = qt.dot(&q);
        }
        Ok(Self {
            deflated_t: qt,
            inv_pi: graph.pi.mapv(|p| 1.0 / p),
        })
    }

    pub fn len(&self) -> usize {
        self.inv_pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pi.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.deflated_t.row(i);
        let b = self.deflated_t.row(j);
        a.iter()
            .zip(b.iter())
            .zip(self.inv_pi.iter())
            .map(|((x, y), w)| w * (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// One diffusion distance. Builds `P^t` on every call; use
/// [`DiffusionDistances`] for many pairs.
pub fn diffusion_distance(model: &DiffusionModel, i: usize, j: usize, t: u32) -> Result<f64> {
    let m = model.len();
    if i >= m || j >= m {
        return Err(Error::InvalidArgument(format!("index out of range for {m} points")));
    }
    Ok(DiffusionDistances::new(&model.graph, t)?.distance(i, j))
}

/// `A^(2t) - √π √πᵀ` together with the stationary distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GramTarget {
    pub b: Array2<f64>,
    pub pi: Array1<f64>,
    pub sqrt_pi: Array1<f64>,
    pub t: u32,
}

impl GramTarget {
    /// Builds the target from a graph alone, by repeated squaring.
    pub fn from_graph(graph: &KernelGraph, t: u32) -> Result<Self> {
        let a2t = matrix_power_even(&graph.symmetric, 2 * t)?;
        let sqrt_pi = graph.pi.mapv(f64::sqrt);
        let b = Array2::from_shape_fn(a2t.dim(), |(i, j)| a2t[[i, j]] - sqrt_pi[i] * sqrt_pi[j]);
        Ok(Self {
            b,
            pi: graph.pi.clone(),
            sqrt_pi,
            t,
        })
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

pub fn gram_target(model: &DiffusionModel) -> Result<GramTarget> {
    GramTarget::from_graph(&model.graph, model.config.t)
}

/// `‖Π^1/2 Γᵀ Γ Π^1/2 − B‖_F²` for an embedding whose rows are `γ_i`.
pub fn gram_objective(target: &GramTarget, rows: &Array2<f64>) -> f64 {
    let y = scale_rows(rows, &target.sqrt_pi);
    let r = y.dot(&y.t()) - &target.b;
    r.iter().map(|v| v * v).sum()
}

fn scale_rows(m: &Array2<f64>, s: &Array1<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for (mut row, &w) in out.rows_mut().into_iter().zip(s.iter()) {
        row *= w;
    }
    out
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// `Γ*ᵀ`: one row per point.
    pub embedding: Array2<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const ORACLE_RESTARTS: u64 = 10;
const ORACLE_STEP: f64 = 0.02;
const ORACLE_MEMORY: usize = 10;
const ORACLE_GRAD_TOL: f64 = 1e-13;
const ORACLE_MAX_POINTS: usize = 64;

/// Minimizes the unconstrained Gram-matching objective by gradient descent,
/// without any eigendecomposition.
///
/// The descent runs on `Y = Π^1/2 Γᵀ` against `B / ‖B‖_F` with
/// Barzilai-Borwein steps guarded by a nonmonotone Armijo test. Ten restarts
/// from seeds `seed..seed+10` are tried and the lowest objective among
/// converged runs is returned.
pub fn gram_oracle(target: &GramTarget, d: usize, iterations: usize, seed: u64) -> Result<OracleSolution> {
    let m = target.len();
    if m > ORACLE_MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "the brute-force oracle is limited to {ORACLE_MAX_POINTS} points, got {m}"
        )));
    }
    if d == 0 || d >= m {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} must be in 1..={}",
            m - 1
        )));
    }
    let scale = target.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(OracleSolution {
            embedding: Array2::zeros((m, d)),
            objective: 0.0,
            grad_norm: 0.0,
            iterations: 0,
        });
    }
    let b = &target.b / scale;

    let mut best: Option<OracleSolution> = None;
    let mut last_grad = f64::INFINITY;
    for restart in 0..ORACLE_RESTARTS {
        let mut rng = seeded_rng(seed.wrapping_add(restart));
        let mut y = Array2::from_shape_fn((m, d), |_| 0.1 * (rng.gen::<f64>() - 0.5));
        let objective = |y: &Array2<f64>| -> (f64, Array2<f64>) {
            let r = y.dot(&y.t()) - &b;
            let f = r.iter().map(|v| v * v).sum::<f64>();
            (f, 4.0 * r.dot(y))
        };
        let (mut f, mut g) = objective(&y);
        let mut history = vec![f];
        let mut step = ORACLE_STEP;
        let mut grad_norm = f64::INFINITY;
        let mut it = 0;
        while it < iterations {
            grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !grad_norm.is_finite() || grad_norm <= ORACLE_GRAD_TOL {
                break;
            }
            let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let g2 = grad_norm * grad_norm;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = &y - &(step * &g);
                let (ft, gt) = objective(&trial);
                if ft <= reference - 1e-4 * step * g2 {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                step *= 0.5;
            }
            let Some((y_new, f_new, g_new)) = accepted else {
                break;
            };
            let s_k = &y_new - &y;
            let z_k = &g_new - &g;
            let sz: f64 = s_k.iter().zip(z_k.iter()).map(|(a, b)| a * b).sum();
            let ss: f64 = s_k.iter().map(|a| a * a).sum();
            step = if sz > 0.0 {
                (ss / sz).clamp(1e-10, 1e10)
            } else {
                ORACLE_STEP
            };
            y = y_new;
            f = f_new;
            g = g_new;
            history.push(f);
            if history.len() > ORACLE_MEMORY {
                history.remove(0);
            }
            it += 1;
        }
        last_grad = grad_norm;
        if grad_norm > ORACLE_GRAD_TOL {
            continue;
        }
        let y = y * scale.sqrt();
        let embedding = Array2::from_shape_fn((m, d), |(i, k)| y[[i, k]] / target.sqrt_pi[i]);
        let objective = gram_objective(target, &embedding);
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(OracleSolution {
                embedding,
                objective,
                grad_norm,
                iterations: it,
            });
        }
    }
    best.ok_or(Error::NonConvergence {
        iterations,
        grad_norm: last_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_helix, generate_swiss_roll};
    use rand::Rng;

    fn frob(m: &Array2<f64>) -> f64 {
        m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn random_data(n: usize, dim: usize, seed: u64) -> DataMatrix {
        let mut rng = seeded_rng(seed);
        DataMatrix::new(Array2::from_shape_fn((n, dim), |_| rng.gen::<f64>()), None).unwrap()
    }

    #[test]
    fn leading_pair_is_stationary() {
        let data = generate_swiss_roll(200, 1).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.05, 1.0, 10).unwrap();
        let model = fit(&data, &cfg, Dimension::Fixed(2)).unwrap();
        assert!((model.eigen.values[0] - 1.0).abs() < 1e-8);
        let phi1 = model.eigen.vectors.column(0);
        for (p, pi) in phi1.iter().zip(model.pi().iter()) {
            assert!((p - pi.sqrt()).abs() < 1e-8);
        }
        let psi1 = model.right_eigenvector(0);
        assert!(psi1.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn equilateral_triangle_is_degenerate() {
        let h = 3f64.sqrt() / 2.0;
        let data = DataMatrix::new(ndarray::array![[0.0, 0.0], [1.0, 0.0], [0.5, h]], None).unwrap();
        let model = fit(&data, &KernelConfig::new(1.0, 1.0, 1).unwrap(), Dimension::Fixed(2)).unwrap();
        for p in model.pi() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((model.eigen.values[1] - model.eigen.values[2]).abs() < 1e-12);
    }

    #[test]
    fn fit_is_deterministic() {
        let data = generate_helix(150, 2).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.05, 1.0, 10).unwrap();
        let a = fit(&data, &cfg, Dimension::Auto).unwrap();
        let b = fit(&data, &cfg, Dimension::Auto).unwrap();
        assert_eq!(a, b);
        assert_eq!(embed(&a), embed(&b));
    }

    #[test]
    fn fit_argument_checks() {
        let data = random_data(2, 2, 0);
        assert!(fit(&data, &KernelConfig::new(1.0, 0.0, 1).unwrap(), Dimension::Fixed(1)).is_err());
        let data = random_data(5, 2, 0);
        let cfg = KernelConfig::new(1.0, 0.0, 1).unwrap();
        assert!(fit(&data, &cfg, Dimension::Fixed(5)).is_err());
        assert!(fit(&data, &cfg, Dimension::Fixed(0)).is_err());
    }

    #[test]
    fn doubling_time_scales_columns() {
        let data = random_data(30, 3, 4);
        let c1 = KernelConfig::new(0.3, 0.5, 2).unwrap();
        let c2 = KernelConfig { t: 4, ..c1 };
        let m1 = fit(&data, &c1, Dimension::Fixed(3)).unwrap();
        let m2 = fit(&data, &c2, Dimension::Fixed(3)).unwrap();
        let (e1, e2) = (embed(&m1), embed(&m2));
        for j in 0..3 {
            let l2 = e1.eigenvalues_used[j].powi(2);
            for k in 0..30 {
                assert!((e2.coords[[k, j]] - l2 * e1.coords[[k, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_kernel_gives_zero_embedding() {
        // a huge bandwidth makes every kernel entry equal to 1
        let data = random_data(6, 2, 9);
        let model = fit(&data, &KernelConfig::new(1e12, 1.0, 1).unwrap(), Dimension::Fixed(3)).unwrap();
        let e = embed(&model);
        assert!(e.coords.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_point_diffusion_distance() {
        // P = [[1-p, p], [p, 1-p]] with p = k/(1+k) (α = 0), π uniform;
        // P^t rows differ by (1-2p)^t in each entry, so
        // d^2 = 2 * 2 * (1-2p)^(2t).
        let data = DataMatrix::new(ndarray::array![[0.0], [1.0]], None).unwrap();
        let cfg = KernelConfig::new(1.0, 0.0, 1).unwrap();
        let graph = build_graph(&data, &cfg).unwrap();
        let k = (-0.5f64).exp();
        let p = k / (1.0 + k);
        for t in [1u32, 2, 5] {
            let expect = (4.0 * (1.0 - 2.0 * p).powi(2 * t as i32)).sqrt();
            let got = DiffusionDistances::new(&graph, t).unwrap().distance(0, 1);
            assert!((got - expect).abs() < 1e-14, "t={t}: {got} vs {expect}");
            assert_eq!(DiffusionDistances::new(&graph, t).unwrap().distance(1, 1), 0.0);
        }
    }

    #[test]
    fn two_point_gram_target() {
        // A = [[a, b], [b, a]] with eigenvalues 1 and λ2 = a - b, φ2 = (1, -1)/√2,
        // so B = λ2^(2t)/2 [[1, -1], [-1, 1]].
        let data = DataMatrix::new(ndarray::array![[0.0], [0.8]], None).unwrap();
        let cfg = KernelConfig::new(1.0, 1.0, 3).unwrap();
        let graph = build_graph(&data, &cfg).unwrap();
        let lambda2 = graph.symmetric[[0, 0]] - graph.symmetric[[0, 1]];
        let g = GramTarget::from_graph(&graph, 3).unwrap();
        let v = lambda2.powi(6) / 2.0;
        let expect = ndarray::array![[v, -v], [-v, v]];
        assert!(frob(&(&g.b - &expect)) < 1e-15);
    }

    #[test]
    fn gram_target_annihilates_sqrt_pi() {
        let data = generate_helix(80, 5).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.1, 1.0, 5).unwrap();
        let model = fit(&data, &cfg, Dimension::Fixed(2)).unwrap();
        let g = gram_target(&model).unwrap();
        assert!(g.b.dot(&g.sqrt_pi).iter().all(|v| v.abs() < 1e-8));
        assert!(frob(&(&g.b - &g.b.t())) < 1e-10);
        let trace: f64 = g.b.diag().sum();
        let spectral: f64 = model.eigen.values.iter().skip(1).map(|l| l.powi(10)).sum();
        assert!((trace - spectral).abs() < 1e-8);
    }

    #[test]
    fn oracle_full_rank_reaches_zero() {
        let data = random_data(6, 2, 21);
        let cfg = KernelConfig::from_quantile(&data, 0.5, 1.0, 1).unwrap();
        let model = fit(&data, &cfg, Dimension::Fixed(5)).unwrap();
        let target = gram_target(&model).unwrap();
        let sol = gram_oracle(&target, 5, 400_000, 1).unwrap();
        assert!(sol.objective < 1e-8, "objective {}", sol.objective);
    }

    #[test]
    fn oracle_rejects_large_problems() {
        let data = random_data(70, 2, 1);
        let graph = build_graph(&data, &KernelConfig::new(0.5, 0.0, 1).unwrap()).unwrap();
        let target = GramTarget::from_graph(&graph, 1).unwrap();
        assert!(gram_oracle(&target, 1, 10, 0).is_err());
    }

    #[test]
    fn oracle_reports_nonconvergence() {
        let data = random_data(8, 2, 1);
        let graph = build_graph(&data, &KernelConfig::new(0.5, 0.0, 1).unwrap()).unwrap();
        let target = GramTarget::from_graph(&graph, 1).unwrap();
        match gram_oracle(&target, 2, 3, 0) {
            Err(Error::NonConvergence { iterations, grad_norm }) => {
                assert_eq!(iterations, 3);
                assert!(grad_norm > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_swiss_roll(60, 3).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.1, 1.0, 10).unwrap();
        let model = fit(&data, &cfg, Dimension::Auto).unwrap();
        let path = dir.path().join("m.txt");
        model.save(&path).unwrap();
        let back = DiffusionModel::load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(embed(&back), embed(&model));

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("sigma", "sigmx")).unwrap();
        assert!(matches!(DiffusionModel::load(&path), Err(Error::Parse { .. })));
    }
}
