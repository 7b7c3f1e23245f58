//! Deep Diffusion Maps: a dense network trained to reproduce the diffusion
//! embedding through a pairwise Gram-matching loss, with no spectral
//! decomposition at any point.
//!
//! For a batch of indices `i, j` with outputs `f_i` the loss is
//!
//! ```text
//! J = (1/B²) Σ_ij (√(π_i π_j) ⟨f_i, f_j⟩ − B_ij)²
//! ```
//!
//! where `B` is the [`GramTarget`] matrix. Diagonal terms are included.

mod adam;
mod mlp;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;

use crate::dataset::DataMatrix;
use crate::diffusion::{Embedding, GramTarget};
use crate::error::{Error, Result};
use crate::stats::seeded_rng;

pub use adam::AdamParams;
pub use mlp::{Activation, Gradients, Layer, Mlp, DEFAULT_HIDDEN};

fn check_batch(rows: usize, indices: &[usize], target: &GramTarget) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if rows != indices.len() {
        return Err(Error::Shape(format!(
            "{rows} output rows for {} batch indices",
            indices.len()
        )));
    }
    let m = target.b.nrows();
    if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
        return Err(Error::InvalidArgument(format!(
            "batch index {bad} out of range for a target of size {m}"
        )));
    }
    Ok(())
}

/// Loss and its gradient with respect to the outputs.
fn loss_and_output_grad(
    outputs: ArrayView2<f64>,
    indices: &[usize],
    target: &GramTarget,
) -> Result<(f64, Array2<f64>)> {
    check_batch(outputs.nrows(), indices, target)?;
    let n = indices.len();
    let s = Array1::from_iter(indices.iter().map(|&i| target.sqrt_pi[i]));
    let mut y = outputs.to_owned();
    for (mut row, &si) in y.rows_mut().into_iter().zip(s.iter()) {
        row *= si;
    }
    let mut r = y.dot(&y.t());
    for (a, &i) in indices.iter().enumerate() {
        let b_row = target.b.row(i);
        for (c, &j) in indices.iter().enumerate() {
            r[[a, c]] -= b_row[j];
        }
    }
    let scale = 1.0 / (n * n) as f64;
    let loss = scale * r.iter().map(|v| v * v).sum::<f64>();
    let mut grad = r.dot(&y);
    for (mut row, &si) in grad.rows_mut().into_iter().zip(s.iter()) {
        row *= 4.0 * scale * si;
    }
    Ok((loss, grad))
}

/// Gram-matching loss of `outputs`, whose rows belong to the target points
/// `indices`.
pub fn pairwise_loss(outputs: ArrayView2<f64>, indices: &[usize], target: &GramTarget) -> Result<f64> {
    loss_and_output_grad(outputs, indices, target).map(|(l, _)| l)
}

/// Loss of the network on `batch` and its exact gradient with respect to every
/// parameter.
pub fn loss_and_gradients(
    model: &Mlp,
    batch: ArrayView2<f64>,
    indices: &[usize],
    target: &GramTarget,
) -> Result<(f64, Gradients)> {
    let cache = model.forward_cached(batch)?;
    let (loss, d_out) = loss_and_output_grad(cache.output.view(), indices, target)?;
    let grads = model.backward_cached(&cache, d_out)?;
    Ok((loss, grads))
}

pub fn backward(model: &Mlp, batch: ArrayView2<f64>, indices: &[usize], target: &GramTarget) -> Result<Gradients> {
    loss_and_gradients(model, batch, indices, target).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Factor applied to the loss before its gradients reach Adam. `None`
    /// uses the reciprocal of the target's mean squared entry, so the
    /// optimized objective starts near 1 whatever the scale of the target.
    /// Reported losses are never scaled.
    pub loss_scale: Option<f64>,
    /// Standardize each input feature with the training points' mean and
    /// standard deviation; the map is stored in the network.
    pub standardize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            output_dim: 2,
            learning_rate: 1e-2,
            batch_size: 512,
            epochs: 500,
            validation_fraction: 0.1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            loss_scale: None,
            standardize_inputs: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.output_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon >= 0.0) {
            return bad("Adam epsilon must be nonnegative".into());
        }
        if let Some(c) = self.loss_scale {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("loss scale must be positive and finite, got {c}"));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean mini-batch loss of each epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss after each epoch.
    pub val_loss: Vec<f64>,
    /// Validation loss of the initial network.
    pub initial_val_loss: f64,
    /// Epoch whose parameters were returned; 0 means the initial network.
    pub best_epoch: usize,
    pub wall_clock: Duration,
    /// Checksum of the returned parameters (see [`Mlp::checksum`]).
    pub checksum: String,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        if self.best_epoch == 0 {
            self.initial_val_loss
        } else {
            self.val_loss[self.best_epoch - 1]
        }
    }

    /// `epoch,train_loss,val_loss` per epoch.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (e, (tr, va)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            out.push_str(&format!("{},{tr},{va}\n", e + 1));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::file(path, e))
    }
}

/// Trains a network mapping the rows of `data` onto the embedding encoded by
/// `target`.
///
/// A validation subset is drawn first; every epoch then shuffles the
/// remaining points into consecutive mini-batches (the last one may be
/// short) and takes one Adam step per batch. The parameters with the lowest
/// validation loss are returned, which for `epochs = 0` is the initial
/// network.
pub fn train(data: &DataMatrix, target: &GramTarget, config: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    config.validate()?;
    let m = data.len();
    if m != target.b.nrows() {
        return Err(Error::Shape(format!(
            "{m} data rows for a target of size {}",
            target.b.nrows()
        )));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("training needs at least two points".into()));
    }
    let start = Instant::now();
    let mut rng = seeded_rng(config.seed);

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let n_val = ((config.validation_fraction * m as f64).round() as usize).clamp(1, m - 1);
    let mut val_idx = order[..n_val].to_vec();
    val_idx.sort_unstable();
    let mut train_idx = order[n_val..].to_vec();
    train_idx.sort_unstable();
    let val_points = data.points().select(ndarray::Axis(0), &val_idx);

    let mut sizes = vec![data.dim()];
    sizes.extend(&config.hidden);
    sizes.push(config.output_dim);
    let mut model = Mlp::new(&sizes, &mut rng)?;
    model.t = target.t;
    if config.standardize_inputs {
        model.standardize_to(data.points().select(ndarray::Axis(0), &train_idx).view())?;
    }

    let val_loss_of = |model: &Mlp, epoch: usize| -> Result<f64> {
        let out = model.forward(val_points.view())?;
        let loss = pairwise_loss(out.view(), &val_idx, target)?;
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::Diverged(epoch))
        }
    };

    let scale = config.loss_scale.unwrap_or_else(|| {
        let energy = target.b.iter().map(|v| v * v).sum::<f64>() / (m * m) as f64;
        if energy > 0.0 {
            1.0 / energy
        } else {
            1.0
        }
    });

    let initial_val_loss = val_loss_of(&model, 0)?;
    let mut best = (initial_val_loss, 0usize, model.clone());
    let mut adam = adam::Adam::new(&model, config.adam());
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_loss = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let as_divergence = |e: Error| match e {
            Error::NonFiniteLayer(_) => Error::Diverged(epoch),
            other => other,
        };
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch = data.points().select(ndarray::Axis(0), chunk);
            let (loss, mut grads) = loss_and_gradients(&model, batch.view(), chunk, target).map_err(as_divergence)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(epoch));
            }
            grads.scale(scale);
            adam.update(&mut model, &grads);
            sum += loss;
            batches += 1;
        }
        train_loss.push(sum / batches as f64);
        let v = val_loss_of(&model, epoch).map_err(as_divergence)?;
        val_loss.push(v);
        if v < best.0 {
            best = (v, epoch, model.clone());
        }
    }

    let (_, best_epoch, model) = best;
    let report = TrainReport {
        train_loss,
        val_loss,
        initial_val_loss,
        best_epoch,
        wall_clock: start.elapsed(),
        checksum: model.checksum(),
    };
    Ok((model, report))
}

/// Embeds new points with a trained network alone.
pub fn predict(model: &Mlp, points: &DataMatrix) -> Result<Embedding> {
    let coords = if points.is_empty() {
        Array2::zeros((0, model.output_dim()))
    } else {
        model.forward(points.points().view())?
    };
    Ok(Embedding {
        coords,
        t: model.t,
        eigenvalues_used: Array1::zeros(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Manifold;
    use crate::diffusion::{embed_with_dimension, fit, Dimension};
    use crate::kernel_graph::KernelConfig;
    use crate::stats::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn toy(m: usize, seed: u64, t: u32) -> (DataMatrix, GramTarget, crate::diffusion::DiffusionModel) {
        let data = Manifold::Helix.generate(m, seed).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.3, 1.0, t).unwrap();
        let model = fit(&data, &cfg, Dimension::Fixed(1)).unwrap();
        let target = GramTarget::from_graph(&model.graph, t).unwrap();
        (data, target, model)
    }

    fn random_outputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded_rng(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn zero_outputs_give_target_energy() {
        let (_, target, _) = toy(12, 1, 2);
        let idx: Vec<usize> = vec![0, 3, 5, 7, 11];
        let loss = pairwise_loss(Array2::zeros((5, 2)).view(), &idx, &target).unwrap();
        let mut expect = 0.0;
        for &i in &idx {
            for &j in &idx {
                expect += target.b[[i, j]].powi(2);
            }
        }
        expect /= 25.0;
        assert!((loss - expect).abs() <= 1e-15 * expect.max(1e-300));
    }

    #[test]
    fn exact_embedding_at_full_rank_has_zero_loss() {
        let (_, target, model) = toy(10, 2, 3);
        let emb = embed_with_dimension(&model, 9);
        let idx: Vec<usize> = (0..10).collect();
        let loss = pairwise_loss(emb.coords.view(), &idx, &target).unwrap();
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn rejects_bad_batches() {
        let (_, target, _) = toy(8, 3, 1);
        let out = Array2::zeros((2, 1));
        assert!(pairwise_loss(out.view(), &[0], &target).is_err());
        assert!(pairwise_loss(out.view(), &[0, 8], &target).is_err());
        assert!(pairwise_loss(Array2::zeros((0, 1)).view(), &[], &target).is_err());
    }

    fn finite_difference_check(seed: u64) {
        let (data, target, _) = toy(10, seed, 2);
        let mut net = Mlp::new(&[3, 6, 5, 2], &mut seeded_rng(seed)).unwrap();
        // Random biases so no ReLU input sits exactly at a kink.
        let mut rng = seeded_rng(seed + 100);
        for layer in &mut net.layers {
            layer.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let idx: Vec<usize> = (0..10).collect();
        let x = data.points().view();
        let (_, grads) = loss_and_gradients(&net, x, &idx, &target).unwrap();
        let h = 1e-5;
        let loss_at = |net: &Mlp| pairwise_loss(net.forward(x).unwrap().view(), &idx, &target).unwrap();
        for l in 0..net.layers.len() {
            for k in 0..net.layers[l].weights.len() + net.layers[l].bias.len() {
                let nw = net.layers[l].weights.len();
                let mut plus = net.clone();
                let mut minus = net.clone();
                let (analytic, p, q) = if k < nw {
                    let ij = (k / net.layers[l].weights.ncols(), k % net.layers[l].weights.ncols());
                    (
                        grads.weights[l][ij],
                        &mut plus.layers[l].weights[ij],
                        &mut minus.layers[l].weights[ij],
                    )
                } else {
                    (
                        grads.biases[l][k - nw],
                        &mut plus.layers[l].bias[k - nw],
                        &mut minus.layers[l].bias[k - nw],
                    )
                };
                *p += h;
                *q -= h;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let err = (analytic - numeric).abs();
                assert!(
                    err <= 1e-7 || err <= 1e-4 * numeric.abs(),
                    "layer {l} param {k}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            finite_difference_check(seed);
        }
    }

    #[test]
    fn zero_network_has_zero_output_bias_gradient() {
        // At f ≡ 0 the loss is stationary in the outputs: ∂J/∂f = (4/B²) S R S f = 0.
        let (data, target, _) = toy(9, 4, 1);
        let net = Mlp::zeros(&[3, 4, 2]).unwrap();
        let idx: Vec<usize> = (0..9).collect();
        let g = backward(&net, data.points().view(), &idx, &target).unwrap();
        assert!(g.biases.last().unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn rotated_optimum_has_vanishing_gradient() {
        // A linear network whose outputs reproduce the exact full-rank
        // embedding, rotated, sits at a global minimum.
        let (_, target, model) = toy(4, 5, 1);
        let emb = embed_with_dimension(&model, 3);
        let theta = 0.7f64;
        let (c, s) = (theta.cos(), theta.sin());
        let rot = ndarray::array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let layer = Layer {
            weights: rot,
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let net = Mlp::from_layers(vec![layer], 1).unwrap();
        let idx: Vec<usize> = (0..4).collect();
        let g = backward(&net, emb.coords.view(), &idx, &target).unwrap();
        assert!(g.norm() <= 1e-6, "gradient norm {}", g.norm());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn loss_is_invariant_under_orthogonal_maps(seed in 0u64..1000, theta in 0.0f64..6.3, flip in any::<bool>()) {
            let (_, target, _) = toy(10, seed % 7, 2);
            let out = random_outputs(6, 2, seed);
            let idx = [0usize, 2, 3, 5, 8, 9];
            let (c, s) = (theta.cos(), theta.sin());
            let sign = if flip { -1.0 } else { 1.0 };
            let q = ndarray::array![[c, -s * sign], [s, c * sign]];
            let a = pairwise_loss(out.view(), &idx, &target).unwrap();
            let b = pairwise_loss(out.dot(&q).view(), &idx, &target).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn epochs_zero_returns_initial_network() {
        let (data, target, _) = toy(20, 6, 2);
        let cfg = TrainConfig {
            epochs: 0,
            output_dim: 1,
            seed: 9,
            ..TrainConfig::default()
        };
        let (net, report) = train(&data, &target, &cfg).unwrap();
        assert_eq!(report.best_epoch, 0);
        assert!(report.train_loss.is_empty());
        // Same stream: validation shuffle, then initialization.
        let mut rng = seeded_rng(9);
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut rng);
        let mut fresh = Mlp::new(&[3, 128, 64, 32, 1], &mut rng).unwrap();
        fresh.t = 2;
        let mut train_idx = order[2..].to_vec();
        train_idx.sort_unstable();
        fresh
            .standardize_to(data.points().select(ndarray::Axis(0), &train_idx).view())
            .unwrap();
        assert_eq!(net, fresh);
    }

    #[test]
    fn training_is_deterministic() {
        let (data, target, _) = toy(40, 7, 2);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            hidden: vec![16, 8],
            output_dim: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, a) = train(&data, &target, &cfg).unwrap();
        let (_, b) = train(&data, &target, &cfg).unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert_eq!(a.train_loss, b.train_loss);
        let (_, c) = train(&data, &target, &TrainConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.checksum, c.checksum);
    }

    #[test]
    fn training_reduces_loss_on_a_line() {
        // Evenly spaced points on a segment; at t = 10 the target is rank one
        // to ~1e-11, so a one-dimensional output can fit it.
        let data = DataMatrix::new(Array2::from_shape_fn((32, 1), |(i, _)| i as f64 / 31.0), None).unwrap();
        let cfg = KernelConfig::from_quantile(&data, 0.5, 1.0, 10).unwrap();
        let model = fit(&data, &cfg, Dimension::Fixed(1)).unwrap();
        let target = GramTarget::from_graph(&model.graph, 10).unwrap();
        let cfg = TrainConfig {
            epochs: 1000,
            batch_size: 32,
            hidden: vec![32, 16],
            output_dim: 1,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_, report) = train(&data, &target, &cfg).unwrap();
        let first = report.train_loss[0];
        let last = *report.train_loss.last().unwrap();
        assert!(last <= 1e-3 * first, "first {first} last {last}");
        let windows: Vec<f64> = report
            .train_loss
            .chunks(100)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        assert!(windows.windows(2).all(|w| w[1] <= w[0]), "{windows:?}");
        assert!(report.train_loss.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (data, target, _) = toy(10, 9, 1);
        let other = Manifold::Helix.generate(11, 0).unwrap();
        assert!(train(&other, &target, &TrainConfig::default()).is_err());
        let cfg = TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(&data, &target, &cfg).is_err());
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(train(&data, &target, &cfg).is_err());
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let (data, target, _) = toy(16, 10, 1);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e200,
            batch_size: 4,
            hidden: vec![4],
            output_dim: 1,
            ..TrainConfig::default()
        };
        match train(&data, &target, &cfg) {
            Err(Error::Diverged(e)) => assert!(e >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn prediction_ignores_batch_partitioning() {
        let net = Mlp::new(&[3, 8, 2], &mut seeded_rng(0)).unwrap();
        let data = Manifold::SwissRoll.generate(7, 1).unwrap();
        let all = predict(&net, &data).unwrap();
        let head = predict(&net, &data.select(&[0, 1, 2])).unwrap();
        let tail = predict(&net, &data.select(&[3, 4, 5, 6])).unwrap();
        assert_eq!(all.coords.slice(ndarray::s![..3, ..]), head.coords);
        assert_eq!(all.coords.slice(ndarray::s![3.., ..]), tail.coords);
        let one = predict(&net, &data.select(&[4])).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(predict(&net, &data.select(&[])).unwrap().len(), 0);
    }
}
