//! Attribute knowledge-graph GCNs for person re-identification.
//!
//! Pipeline: estimate an attribute co-occurrence graph from training labels,
//! turn it into per-attribute classifiers with a GCN, score and re-weight
//! attributes per image, and fuse them with visual features for retrieval.

mod binio;
pub mod attkg;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gcn;
pub mod model;
pub mod numerics;
pub mod reid;
pub mod rng;
pub mod trainer;

pub use attkg::{estimate_cooccurrence, normalize_adjacency, AttributeSchema, CooccurrenceGraph};
pub use error::{Error, LoadError, ParseError, Result};
pub use model::{ModelParams, Variant};
pub use numerics::Matrix;
pub use trainer::{fit, TrainConfig, TrainReport};
