//! Eigendecomposition-based graph adaptation for semi-supervised node
//! classification.
//!
//! The pipeline: normalize an undirected graph symmetrically with self-loops,
//! take its top-d singular components, and learn per-eigenvalue reweighting
//! functions jointly with a small classifier head. Four model variants cover
//! graph-only, feature-aware, concatenation, and bin-tied (regularized)
//! adaptation, plus plain LR/MLP baselines on raw features.

pub mod adaptation;
pub mod analysis;
pub mod cache;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod train;

pub use adaptation::{adapt, adapt_grad, l1_penalty, make_bins, AdaptKind, AdaptationParams, BinSpec};
pub use error::{Error, Result};
pub use graph::{build_undirected, homophily_score, sym_normalize, Graph, LabeledGraph, NormalizedAdjacency};
pub use model::{ModelConfig, ModelParams, Variant};
pub use spectral::{feature_spectrum, project, truncated_spectrum, FeatureMatrix, FeatureSpectral, SpectralBasis};
pub use train::{cross_entropy, evaluate, fit, sweep, FitReport, TrainConfig};
