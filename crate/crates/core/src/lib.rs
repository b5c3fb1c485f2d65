//! Embedding consistency regulation: anchor-based control-token conditioning
//! for compact models, plus the retrieval and geometry tooling around it.
//!
//! The pipeline runs in four steps:
//!
//! 1. [`anchors`] derives a fixed set of anchor vectors per semantic factor
//!    from teacher embeddings.
//! 2. [`codec`] projects a model embedding onto the anchors, quantizes the
//!    affinities, and emits a control-token prefix.
//! 3. [`toytrain`] trains a small model on `[prefix, x]` inputs.
//! 4. [`geometry`] measures the resulting representation geometry.
//!
//! [`retrieval`] holds the PCA and HNSW index used for local top-k search.

pub mod anchors;
pub mod binio;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod factor;
pub mod geometry;
pub mod retrieval;
pub mod rng;
pub mod toytrain;

pub use anchors::{
    build_anchor_set, kmeans, label_centroids, load_anchors, save_anchors, AnchorMode,
    AnchorParams, AnchorSet, FactorGroup, KMeansParams,
};
pub use codec::{
    build_input, emit_tokens, encode, project, quantize, topk_anchors, AffinityVector, ControlCode,
    ControlPrefix, ControlToken, EncodeConfig, EncodeMode, RetrievalScope,
};
pub use corpus::{
    load_corpus, load_embeddings, normalize, save_corpus, save_embeddings, Corpus, CorpusRecord,
    EmbeddingMatrix, Lang,
};
pub use error::{EcrError, Result};
pub use factor::FactorCode;
pub use geometry::{GeometryReport, ManifoldPartition, PurityReport, SelectionAgreement};
pub use retrieval::{brute_force_topk, fit_pca, HnswIndex, HnswParams, PcaModel, QueryResult};
pub use toytrain::{ExperimentReport, ToyModel, TrainConfig};
