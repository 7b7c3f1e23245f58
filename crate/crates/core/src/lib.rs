//! Diffusion Maps, their Nyström out-of-sample extension, and Deep Diffusion
//! Maps: a neural network trained to reproduce the diffusion embedding
//! without any spectral decomposition.
//!
//! ```no_run
//! use ddm_core::{embed, fit, Dimension, KernelConfig, Manifold};
//!
//! let data = Manifold::Helix.generate(500, 7)?;
//! let config = KernelConfig::from_quantile(&data, 3e-2, 1.0, 100)?;
//! let model = fit(&data, &config, Dimension::Auto)?;
//! let embedding = embed(&model);
//! # Ok::<(), ddm_core::Error>(())
//! ```

pub mod dataset;
pub mod ddm;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod kernel_graph;
pub mod metrics;
pub mod nystrom;
pub mod spectral;
pub mod stats;
mod textio;

pub use dataset::{load_csv, split, DataMatrix, Manifold};
pub use ddm::{predict, train, Mlp, TrainConfig, TrainReport};
pub use diffusion::{
    diffusion_distance, embed, embed_with_dimension, fit, gram_oracle, gram_target, DiffusionModel, Dimension,
    Embedding, GramTarget,
};
pub use error::{Error, ErrorClass, Result};
pub use kernel_graph::{build_graph, GraphWarning, KernelConfig, KernelGraph};
pub use metrics::{bootstrap_ci, mre, mre_by_decile, DecileProfile, ZeroDistance};
pub use nystrom::{ExtensionScaling, NystromExtension};
pub use spectral::{eig_symmetric, select_dimension, DimensionSelection, EigenSystem};
