//! Relational multi-task learning on a bipartite data/task knowledge graph.
//!
//! Data points and tasks become two node types of a per-batch graph. Data
//! nodes start from the feature extractor's embedding, task nodes from the
//! task head's weight row (or a ones vector for tasks never seen in
//! training), and every label known at inference time becomes an edge. A
//! heterogeneous GraphSAGE stack then predicts the labels of the missing
//! data/task links.
//!
//! All numeric code is generic over [`numcore::Scalar`] (`f32`/`f64`); the
//! aliases below fix it to `f64`, which is what the CLI and tests use.

pub mod datasets;
pub mod error;
pub mod kgraph;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod training;

pub use error::{Error, Result};

pub type Matrix = numcore::DenseMatrix<f64>;
pub type Params = numcore::ParamStore<f64>;
pub type Dataset = datasets::MultiLabelDataset<f64>;
pub type Graph = kgraph::KnowledgeGraph<f64>;
pub type Model = model::MetaLinkModel<f64>;
