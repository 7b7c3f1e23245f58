use std::fmt;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stats::Rng;
use crate::textio::{write_reals, RecordReader};

const NETWORK_MAGIC: &str = "ddm-network";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected layer computing `act(x W + b)` for row vectors `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    fn pre_activation(&self, input: &ArrayView2<f64>) -> Array2<f64> {
        input.dot(&self.weights) + &self.bias
    }
}

fn activate(z: &Array2<f64>, act: Activation) -> Array2<f64> {
    match act {
        Activation::Relu => z.mapv(|v| v.max(0.0)),
        Activation::Identity => z.clone(),
    }
}

/// Gradient of a scalar loss with respect to every layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, c: f64) {
        self.weights.iter_mut().for_each(|w| *w *= c);
        self.biases.iter_mut().for_each(|b| *b *= c);
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Dense feedforward network: ReLU hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// Diffusion time of the embedding this network was trained to produce.
    pub t: u32,
    /// Fixed affine map `(x − center) / scale` applied to inputs before the
    /// first layer.
    pub input_center: Array1<f64>,
    pub input_scale: Array1<f64>,
}

/// Hidden widths of the default dense architecture.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 64, 32];

pub(crate) struct ForwardCache {
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// Randomly initialized network with the given layer widths
    /// `[input, hidden.., output]`.
    ///
    /// Weights are uniform in `±√(6/fan_in)` for ReLU layers and
    /// `±√(3/fan_in)` for the linear output; biases start at zero.
    pub fn new(layer_sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let last = layer_sizes.len() - 2;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let activation = if l == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                let gain = if l == last { 3.0 } else { 6.0 };
                let limit = (gain / fan_in as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_in, fan_out), |_| limit * (2.0 * rng.gen::<f64>() - 1.0));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self::assemble(layers, 0))
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let last = layer_sizes.len() - 2;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| Layer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
                activation: if l == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Ok(Self::assemble(layers, 0))
    }

    pub fn from_layers(layers: Vec<Layer>, t: u32) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.ncols() {
                return Err(Error::Shape(format!("layer {l}: bias does not match weights")));
            }
            if l > 0 && layers[l - 1].weights.ncols() != layer.weights.nrows() {
                return Err(Error::Shape(format!("layer {l}: input width does not chain")));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer(l));
            }
        }
        Ok(Self::assemble(layers, t))
    }

    fn assemble(layers: Vec<Layer>, t: u32) -> Self {
        let d = layers[0].weights.nrows();
        Self {
            layers,
            t,
            input_center: Array1::zeros(d),
            input_scale: Array1::ones(d),
        }
    }

    /// Sets the input standardization; zero or non-finite scales become 1.
    pub fn set_standardization(&mut self, center: Array1<f64>, scale: Array1<f64>) -> Result<()> {
        let d = self.input_dim();
        if center.len() != d || scale.len() != d {
            return Err(Error::Shape(format!("standardization must have length {d}")));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input center".into()));
        }
        self.input_center = center;
        self.input_scale = scale.mapv(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
        Ok(())
    }

    /// Per-feature mean and population standard deviation of `points`.
    pub fn standardize_to(&mut self, points: ArrayView2<f64>) -> Result<()> {
        let n = points.nrows() as f64;
        let center = points.sum_axis(Axis(0)) / n;
        let scale = Array1::from_iter(
            points
                .columns()
                .into_iter()
                .zip(center.iter())
                .map(|(c, &m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()),
        );
        self.set_standardization(center, scale)
    }

    fn standardized(&self, batch: &ArrayView2<f64>) -> Array2<f64> {
        (batch - &self.input_center) / &self.input_scale
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.nrows())
            .chain(self.layers.iter().map(|l| l.weights.ncols()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has width {}, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Evaluates the network on every row of `batch`.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        let mut h = self.standardized(&batch);
        for layer in &self.layers {
            h = activate(&layer.pre_activation(&h.view()), layer.activation);
        }
        Ok(h)
    }

    pub(crate) fn forward_cached(&self, batch: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = self.standardized(&batch);
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&h.view());
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer(l));
            }
            let a = activate(&z, layer.activation);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(ForwardCache { inputs, pre, output: h })
    }

    /// Backpropagates `d_output = ∂L/∂output` through a cached forward pass.
    pub(crate) fn backward_cached(&self, cache: &ForwardCache, d_output: Array2<f64>) -> Result<Gradients> {
        let n = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        let mut delta = d_output;
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                delta.zip_mut_with(&cache.pre[l], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let gw = cache.inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if gw.iter().chain(gb.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer(l));
            }
            if l > 0 {
                delta = delta.dot(&layer.weights.t());
            }
            weights[l] = gw;
            biases[l] = gb;
        }
        Ok(Gradients { weights, biases })
    }

    /// Hex SHA-256 of the layer sizes and every parameter's bit pattern.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in self.layer_sizes() {
            h.update((s as u64).to_le_bytes());
        }
        for v in self.input_center.iter().chain(self.input_scale.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::file(path, e))?;
        w.flush().map_err(|e| Error::file(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{NETWORK_MAGIC} 1")?;
        writeln!(
            w,
            "# weights are fan_in rows of fan_out reals; reals use 17 significant digits"
        )?;
        writeln!(w, "t {}", self.t)?;
        writeln!(w, "inputs {}", self.input_dim())?;
        write_reals(w, "center", self.input_center.iter().copied())?;
        write_reals(w, "scale", self.input_scale.iter().copied())?;
        writeln!(w, "layers {}", self.layers.len())?;
        for layer in &self.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            writeln!(w, "layer {fan_in} {fan_out} {}", layer.activation)?;
            for row in layer.weights.rows() {
                write_reals(w, "w", row.iter().copied())?;
            }
            write_reals(w, "b", layer.bias.iter().copied())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let mut r = RecordReader::new(BufReader::new(file), path);
        let header = r.expect(NETWORK_MAGIC)?;
        if header.first().map(String::as_str) != Some("1") {
            return Err(r.error(2, format!("unsupported network version {header:?}")));
        }
        let t: u32 = r.expect_one("t")?;
        let d: usize = r.expect_one("inputs")?;
        let center = Array1::from(r.expect_reals("center", d)?);
        let scale = Array1::from(r.expect_reals("scale", d)?);
        let n: usize = r.expect_one("layers")?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let f = r.expect("layer")?;
            if f.len() != 3 {
                return Err(r.error(2, "`layer` takes fan_in, fan_out and an activation"));
            }
            let fan_in: usize = r.parse(&f[0], 2)?;
            let fan_out: usize = r.parse(&f[1], 3)?;
            let activation: Activation = f[2].parse().map_err(|_| r.error(4, "unknown activation"))?;
            let mut weights = Array2::zeros((fan_in, fan_out));
            for i in 0..fan_in {
                weights.row_mut(i).assign(&Array1::from(r.expect_reals("w", fan_out)?));
            }
            let bias = Array1::from(r.expect_reals("b", fan_out)?);
            layers.push(Layer {
                weights,
                bias,
                activation,
            });
        }
        let mut net = Self::from_layers(layers, t)?;
        if net.input_dim() != d {
            return Err(Error::Shape(format!(
                "network file declares {d} inputs but its first layer takes {}",
                net.input_dim()
            )));
        }
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("input scales must be positive".into()));
        }
        net.set_standardization(center, scale)?;
        Ok(net)
    }
}
