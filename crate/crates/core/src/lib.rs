//! Text-only identity inference against contrastive text-image models.
//!
//! Given only a person's name, decide whether that name appeared in the
//! training data of a CLIP-style model. Images are optimized to match the
//! name's embedding; names the model was trained on yield images that match
//! more strongly and more consistently than names it never saw. Anomaly
//! detectors fitted on gibberish texts (which cannot have been in training)
//! vote on each name.
//!
//! The usual flow is [`gibberish`] → [`features::batch_extract`] →
//! [`ensemble::fit_ensemble`] → [`ensemble::infer`], optionally followed by
//! [`photo::enhanced_infer`] when a few real photos are at hand.
//! [`trainer`] builds small targets with known membership to test against.

// `!(x > 0.0)` is used on purpose so that NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cli;
pub mod codec;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gibberish;
pub mod photo;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod trainer;

pub use backend::{
    cosine_similarity, BackendInfo, BridgeBackend, Embedding, EmbeddingBackend, ImageTensor,
    SyntheticBackend, SyntheticConfig, TextQuery,
};
pub use ensemble::{
    fit_ensemble, infer, Decision, DetectionResult, EnsembleConfig, EnsembleModel, FeatureSet,
};
pub use error::{Error, Result};
pub use evaluation::{
    compute_metrics, run_experiment, ExperimentConfig, Metrics, ToyBenchmarkConfig,
};
pub use features::{
    batch_extract, extract_features, optimize_image, FeatureVector, GradientMode,
    OptimizationConfig,
};
pub use photo::{enhanced_infer, FaceExtractor, PhotoSet, RealPhoto};
pub use trainer::{
    generate_identity_dataset, train_contrastive, ContrastiveTrainConfig, DatasetConfig,
};
