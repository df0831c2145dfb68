//! LeanVec: graph-based similarity search over high-dimensional vectors,
//! accelerated by learned linear dimensionality reduction and
//! locally-adaptive vector quantization (LVQ).
//!
//! The search pipeline projects each query once into a reduced space, walks a
//! Vamana-style graph over reduced quantized "primary" vectors, then re-ranks
//! the surviving candidates against full-dimensional "secondary" vectors.
//! Projections are trained either from the database alone (PCA) or from a
//! database/query pair (Frank-Wolfe block-coordinate descent, or an
//! eigenvector search over a blended second-moment matrix) so that
//! out-of-distribution query sets keep their accuracy.

pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod lvq;
pub mod pipeline;
pub mod projection;
pub mod storage;
pub mod store;

pub use error::{Error, Result};
pub use eval::{
    bench, brute_force_topk, mean_recall, recall, BenchOptions, BenchReport, GroundTruth,
    SweepPoint,
};
pub use graph::{EntryPoint, GraphBuildConfig, GraphIndex, SearchParams};
pub use linalg::GramPair;
pub use lvq::{LvqCode, LvqCodec, LvqStore};
pub use pipeline::{build_index, rerank, IndexBuildParams, LeanVecIndex, QueryResult};
pub use projection::{
    train_grams, train_id, train_ood_es, train_ood_fw, ConvergenceReport, FwConfig,
    ProjectionPair, Termination,
};
pub use store::{Metric, PrimaryStore, SecondaryMode, SecondaryStore};
