//! Desk-scale long-tail retrieval laboratory.
//!
//! The crate covers the full loop: corpus ingestion, BM25 sparse retrieval,
//! a trainable linear bi-encoder over hashed subword features with exact
//! dense retrieval, an inverse model that reconstructs text from embeddings,
//! round-trip data selection, contrastive retriever training, a learned
//! sparse/dense query router, and frequency-bucketed evaluation. A bundled
//! testbed generator produces a corpus, a synthetic-triple pool, and
//! evaluation splits small enough for every claim to be checked by test.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pin the shipped `f64` pipeline.

pub mod corpus;
pub mod embed;
pub mod evalkit;
pub mod invert;
pub mod lexical;
pub mod persist;
pub mod roundtrip;
pub mod router;
pub mod scalar;
pub mod synthgen;
pub mod testbed;
pub mod train;

pub use corpus::{Passage, PassageId, PassageStore, QASample};
pub use evalkit::{Bucket, BucketSpec, EvalReport};
pub use roundtrip::Category;
pub use router::Route;
pub use synthgen::{TemplateSet, Triple};

/// Concrete `f64` instantiations used by the shipped pipeline.
pub type FeatureVector = embed::FeatureVector<f64>;
pub type EncoderParams = embed::EncoderParams<f64>;
pub type Embedding = embed::Embedding<f64>;
pub type DenseIndex = embed::DenseIndex<f64>;
pub type SparseIndex = lexical::SparseIndex<f64>;
pub type InverseModel = invert::InverseModel<f64>;
pub type InverseConfig = invert::InverseConfig<f64>;
pub type ReconstructionResult = invert::ReconstructionResult<f64>;
pub type ReconstructionReport = roundtrip::ReconstructionReport<f64>;
pub type SelectionConfig = roundtrip::SelectionConfig<f64>;
pub type TrainConfig = train::TrainConfig<f64>;
pub type TrainingExample = train::TrainingExample;
pub type OptimizerKind = train::OptimizerKind<f64>;
pub type RouterModel = router::RouterModel<f64>;
pub type RouterConfig = router::RouterConfig<f64>;
pub type RouterFeatures = router::RouterFeatures<f64>;
