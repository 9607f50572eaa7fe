//! Explainable multi-class classification of fragmented tabular data by
//! centrality scoring on per-class flip graphs.

pub mod abstraction;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod explain;
pub mod harness;
pub mod knowledge_graph;
pub mod model;
pub mod rng;
mod svg;
pub mod tabular;

pub use classifier::{ClassificationResult, Metric, Normalization, SignificanceProfile};
pub use error::{CactusError, Result};
pub use harness::{balanced_accuracy, synthesize, SyntheticSpec};
pub use model::{fit, Model, TrainConfig};
pub use tabular::{load_csv, Dataset, SchemaConfig, Table};
