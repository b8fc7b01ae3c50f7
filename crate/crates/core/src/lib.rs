//! Learning-to-rank kernels: listwise data model, sparse-feature embeddings,
//! univariate and groupwise neural scorers, ranking losses and metrics, and
//! an Adagrad-trained model wrapper.
//!
//! The crate only needs `alloc`. Disable the default `std` feature for
//! `no_std` targets; the numerics are identical either way (all transcendental
//! functions come from `libm`).

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adagrad;
pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scoring;

pub use adagrad::{AdagradConfig, AdagradState, BlockGrad};
pub use data::{Batch, BatchIterator, ExampleList, FeatureMap, Item, RawRecord, TruncatePolicy};
pub use error::{Error, Result};
pub use features::{EmbeddingTable, FeatureKind, FeatureScope, FeatureSpec, FeatureTransform, Vocabulary};
pub use losses::{make_loss_fn, LossFn, LossKey, LossOutput};
pub use matrix::Matrix;
pub use metrics::{make_metric_fn, MetricFn, MetricKey, MetricKind, MetricSummary};
pub use model::{build_model, EvalReport, Mode, Model, ModelParams, RankingConfig, RankingHead, RunOutput};
pub use nn::DenseLayerParams;
pub use scoring::{ScoredList, Scorer, ScorerArchitecture};
