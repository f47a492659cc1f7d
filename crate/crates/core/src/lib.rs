//! Open-book kNN inference.
//!
//! A datastore of (embedding, relation label) pairs is searched exactly for
//! the k nearest keys of a query. Their labels form a distribution through a
//! softmax over negative distances, which is mixed with a base model's
//! distribution by a single weight λ:
//!
//! ```text
//! p_knn(r) ∝ Σ_{i ∈ N, label_i = r} exp(−d(q, key_i) / T)
//! p(r)     = λ · p_knn(r) + (1 − λ) · p_base(r)
//! ```
//!
//! Storage and distance kernels are generic over [`Scalar`] (`f32`, `f64`);
//! probabilities are always `f64`. The aliases below fix the storage type
//! used by the file formats and the command-line tool.

pub mod cli;
pub mod datastore;
pub mod error;
pub mod eval;
pub mod inference;
pub mod ingest;
pub mod kernels;
pub mod scalar;
pub mod tfidf;
pub mod types;

pub use datastore::{Datastore, Neighbor, NeighborSet, SearchScratch};
pub use error::{Error, Result};
pub use inference::{
    interpolate, knn_distribution, predict, predict_batch, predict_with, Prediction, Query,
};
pub use kernels::{argmax_label, distance, softmax};
pub use scalar::Scalar;
pub use types::{
    Embedding, EntryId, InferenceConfig, LabelDistribution, LabelId, LabelTable, Metric,
};

pub type Embedding32 = Embedding<f32>;
pub type Embedding64 = Embedding<f64>;
pub type Datastore32 = Datastore<f32>;
pub type Datastore64 = Datastore<f64>;
pub type Query32 = Query<f32>;
pub type Query64 = Query<f64>;
