//! Contextualized knowledge-graph representations for visit-level risk prediction.
//!
//! The pipeline links free-text medical attributes to knowledge-graph entities,
//! turns every visit into a hyperedge over its attribute nodes, initializes node
//! features from trained KG embeddings and then learns hyperedge and node
//! embeddings with a learned-query multi-head attention hypergraph transformer.
//!
//! Stages, in pipeline order:
//! - [`kg_store`]: triple loading, degree index, top-K subsampling
//! - [`linker`]: name normalization, cosine candidate retrieval, one-to-one linking
//! - [`kg_embed`]: ComplEx / TransE training, PCA fusion
//! - [`ehr_ingest`]: visit records, splits, synthetic cohorts
//! - [`hypergraph`]: incidence structure and initial node features
//! - [`model`]: attention pooling, forward/backward, Adam, training loop
//! - [`metrics`]: AUROC, average precision, F1, macro averaging
//! - [`analysis`]: similarity deltas and co-occurrence statistics
//! - [`pipeline`]: end-to-end orchestration with manifests and repeats

pub mod analysis;
pub mod ehr_ingest;
pub mod error;
pub mod hypergraph;
pub mod kg_embed;
pub mod kg_store;
pub mod linker;
pub mod metrics;
pub mod model;
pub mod pipeline;

mod util;

pub use error::{Error, Result};
