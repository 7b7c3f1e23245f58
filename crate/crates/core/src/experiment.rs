//! Train/test comparison of the Nyström extension and Deep Diffusion Maps
//! against Diffusion Maps fit on the whole sample.
//!
//! A generated sample `D` is split into `D_a` and `D_b`. The reference
//! embedding comes from fitting all of `D`; Nyström extends a model fit on
//! `D_a` to both halves, and the network is trained on `D_a` only.

use std::time::{Duration, Instant};

use crate::dataset::{split_indices, DataMatrix, Manifold};
use crate::ddm::{predict, train, Mlp, TrainConfig, TrainReport};
use crate::diffusion::{embed, fit, DiffusionModel, Dimension, Embedding, GramTarget};
use crate::error::Result;
use crate::kernel_graph::{bandwidth_from_quantile, KernelConfig};
use crate::metrics::{bootstrap_ci, pair_errors, DecileProfile, ZeroDistance};
use crate::nystrom::NystromExtension;
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub manifold: Manifold,
    pub n: usize,
    pub n_a: usize,
    pub q: f64,
    pub alpha: f64,
    pub t: u32,
    pub d: usize,
    /// Seeds generation and the split.
    pub seed: u64,
    pub train: TrainConfig,
    pub confidence: f64,
    pub resamples: usize,
}

impl Protocol {
    /// Hyperparameters used for the synthetic benchmarks: 2000 points split
    /// evenly, `α = 1`, `t = 100`, `d = 2`, with a per-manifold quantile.
    pub fn benchmark(manifold: Manifold) -> Self {
        let q = match manifold {
            Manifold::SwissRoll | Manifold::SCurve => 5e-3,
            Manifold::Helix => 3e-2,
        };
        Self {
            manifold,
            n: 2000,
            n_a: 1000,
            q,
            alpha: 1.0,
            t: 100,
            d: 2,
            seed: 0,
            train: TrainConfig {
                epochs: 1000,
                ..TrainConfig::default()
            },
            confidence: 0.95,
            resamples: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nystrom,
    Ddm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nystrom => "nystrom",
            Method::Ddm => "ddm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    A,
    B,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::A => "a",
            Subset::B => "b",
        }
    }
}

/// Error of one method on one subset relative to the reference embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub method: Method,
    pub subset: Subset,
    pub mre: f64,
    pub ci: (f64, f64),
    pub deciles: DecileProfile,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub protocol: Protocol,
    pub data: DataMatrix,
    pub index_a: Vec<usize>,
    pub index_b: Vec<usize>,
    pub union_model: DiffusionModel,
    pub model_a: DiffusionModel,
    pub network: Mlp,
    pub train_report: TrainReport,
    pub reference: [Embedding; 2],
    pub nystrom: [Embedding; 2],
    pub ddm: [Embedding; 2],
    pub comparisons: Vec<Comparison>,
    pub timings: Vec<(&'static str, Duration)>,
}

impl Outcome {
    pub fn comparison(&self, method: Method, subset: Subset) -> &Comparison {
        self.comparisons
            .iter()
            .find(|c| c.method == method && c.subset == subset)
            .expect("every method is compared on both subsets")
    }
}

fn rows(e: &Embedding, idx: &[usize]) -> Embedding {
    Embedding {
        coords: e.coords.select(ndarray::Axis(0), idx),
        t: e.t,
        eigenvalues_used: e.eigenvalues_used.clone(),
    }
}

fn compare(
    method: Method,
    subset: Subset,
    test: &Embedding,
    reference: &Embedding,
    p: &Protocol,
) -> Result<Comparison> {
    let pairs = pair_errors(test, reference, ZeroDistance::Error)?;
    Ok(Comparison {
        method,
        subset,
        mre: mean(&pairs.errors),
        ci: bootstrap_ci(&pairs.errors, p.confidence, p.resamples, p.seed)?,
        deciles: DecileProfile::from_pairs(&pairs),
    })
}

/// Runs the full pipeline. The bandwidth is the `q`-quantile of distances
/// over the whole sample and is shared by both fits.
pub fn run(protocol: &Protocol) -> Result<Outcome> {
    let p = protocol;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        timings.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let data = p.manifold.generate(p.n, p.seed)?;
    let (index_a, index_b) = split_indices(p.n, p.n_a, p.seed)?;
    let data_a = data.select(&index_a);
    let data_b = data.select(&index_b);
    let sigma = bandwidth_from_quantile(&data, p.q)?;
    let config = KernelConfig {
        q: Some(p.q),
        ..KernelConfig::new(sigma, p.alpha, p.t)?
    };

    let union_model = fit(&data, &config, Dimension::Fixed(p.d))?;
    let union_embedding = embed(&union_model);
    let reference = [rows(&union_embedding, &index_a), rows(&union_embedding, &index_b)];
    lap("fit_union", &mut timings);

    let model_a = fit(&data_a, &config, Dimension::Fixed(p.d))?;
    let ext = NystromExtension::new(&model_a);
    let nystrom = [ext.extend_embedding(&data_a)?, ext.extend_embedding(&data_b)?];
    lap("fit_and_extend", &mut timings);

    let target = GramTarget::from_graph(&model_a.graph, p.t)?;
    let train_config = TrainConfig {
        output_dim: p.d,
        ..p.train.clone()
    };
    let (network, train_report) = train(&data_a, &target, &train_config)?;
    let ddm = [predict(&network, &data_a)?, predict(&network, &data_b)?];
    lap("train_and_predict", &mut timings);

    let mut comparisons = Vec::new();
    for (method, emb) in [(Method::Nystrom, &nystrom), (Method::Ddm, &ddm)] {
        for (k, subset) in [Subset::A, Subset::B].into_iter().enumerate() {
            comparisons.push(compare(method, subset, &emb[k], &reference[k], p)?);
        }
    }
    lap("evaluate", &mut timings);

    Ok(Outcome {
        protocol: p.clone(),
        data,
        index_a,
        index_b,
        union_model,
        model_a,
        network,
        train_report,
        reference,
        nystrom,
        ddm,
        comparisons,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_pipeline_runs_end_to_end() {
        let protocol = Protocol {
            n: 120,
            n_a: 60,
            q: 0.1,
            t: 5,
            train: TrainConfig {
                epochs: 20,
                batch_size: 32,
                hidden: vec![16, 8],
                ..TrainConfig::default()
            },
            resamples: 50,
            ..Protocol::benchmark(Manifold::Helix)
        };
        let out = run(&protocol).unwrap();
        assert_eq!(out.comparisons.len(), 4);
        assert_eq!(out.reference[0].len(), 60);
        assert_eq!(out.ddm[1].len(), 60);
        for c in &out.comparisons {
            assert!(c.mre.is_finite() && c.mre >= 0.0);
            assert!(c.ci.0 <= c.ci.1);
        }
        // Nyström on its own training points is the fitted embedding, which
        // differs from the union fit only through sampling.
        assert!(out.comparison(Method::Nystrom, Subset::A).mre < 1.0);
    }
}
