//! End-to-end query path: project the query once, traverse the graph over
//! primary (reduced, quantized) vectors, then re-rank the surviving
//! candidates exactly against the secondary (full-dimensional) store.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{self, GraphBuildConfig, GraphIndex, GraphVectors, SearchParams, SearchScratch};
use crate::projection::ProjectionPair;
use crate::store::{Metric, PrimaryStore, SecondaryMode, SecondaryStore};

/// Final answer for one query: ids and their exact secondary-store
/// similarities, sorted by descending similarity with ascending-id
/// tie-breaks.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub ids: Vec<u32>,
    pub scores: Vec<f32>,
}

/// Build-time choices for [`build_index`].
#[derive(Debug, Clone)]
pub struct IndexBuildParams {
    pub metric: Metric,
    /// Normalize incoming queries at search time (cosine ingestion).
    pub normalize_queries: bool,
    /// LVQ bit widths for the primary store, or `None` to keep reduced
    /// vectors uncompressed.
    pub primary_bits: Option<(u8, u8)>,
    pub secondary: SecondaryMode,
    pub graph: GraphBuildConfig,
}

impl Default for IndexBuildParams {
    fn default() -> Self {
        IndexBuildParams {
            metric: Metric::InnerProduct,
            normalize_queries: false,
            primary_bits: Some((8, 0)),
            secondary: SecondaryMode::F32 { half: false },
            graph: GraphBuildConfig::default(),
        }
    }
}

/// A frozen two-phase index. Searches share no mutable state beyond an
/// atomic instrumentation counter, so concurrent use is unrestricted.
#[derive(Debug)]
pub struct LeanVecIndex {
    projection: ProjectionPair,
    a_runtime: Vec<f32>,
    primary: PrimaryStore,
    secondary: SecondaryStore,
    graph: GraphIndex,
    metric: Metric,
    normalize_queries: bool,
    projections_done: AtomicU64,
}

/// Adapter exposing a primary store to the graph builder.
pub struct PrimaryGraphView<'a> {
    pub store: &'a PrimaryStore,
    pub metric: Metric,
}

impl GraphVectors for PrimaryGraphView<'_> {
    fn len(&self) -> usize {
        self.store.len()
    }

    fn dim(&self) -> usize {
        self.store.dim()
    }

    fn decode_into(&self, id: u32, out: &mut [f32]) {
        self.store.decode_into(id, out);
    }

    fn dist_to(&self, query: &[f32], id: u32) -> f32 {
        self.store.dist_to(self.metric, query, id)
    }

    fn prepared_scorer<'a>(&'a self, query: &'a [f32]) -> Box<dyn Fn(u32) -> f32 + 'a> {
        Box::new(self.store.scorer(self.metric, query))
    }
}

/// Row-major f32 copy of a projection matrix for runtime use.
pub(crate) fn matrix_f32(m: ArrayView2<f64>) -> Vec<f32> {
    m.iter().map(|&v| v as f32).collect()
}

/// `out = M q` in 32-bit arithmetic, with `M` given row-major.
fn apply_projection(m: &[f32], rows: usize, cols: usize, q: &[f32], out: &mut [f32]) {
    for (r, slot) in out.iter_mut().enumerate().take(rows) {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0f32;
        for (a, b) in row.iter().zip(q.iter()) {
            acc += a * b;
        }
        *slot = acc;
    }
}

/// Projects every row of `data` with the database-side matrix of `pair`.
pub fn project_rows(m: ArrayView2<f64>, data: ArrayView2<f32>) -> Array2<f32> {
    let (d, big_d) = (m.nrows(), m.ncols());
    let m32 = matrix_f32(m);
    let mut out = Array2::zeros((data.nrows(), d));
    let mut q = vec![0.0f32; big_d];
    let mut proj = vec![0.0f32; d];
    for (i, row) in data.rows().into_iter().enumerate() {
        for (dst, &src) in q.iter_mut().zip(row.iter()) {
            *dst = src;
        }
        apply_projection(&m32, d, big_d, &q, &mut proj);
        for (j, &v) in proj.iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Builds a [`LeanVecIndex`]: reduce the database through `projection.b()`,
/// quantize per `primary_bits`, build the graph over the primary store, and
/// retain the full-dimensional vectors as the secondary store.
pub fn build_index(
    data: ArrayView2<f32>,
    projection: ProjectionPair,
    params: &IndexBuildParams,
) -> Result<LeanVecIndex> {
    if data.ncols() != projection.source_dim() {
        return Err(Error::shape(
            format!("data of dimension {}", projection.source_dim()),
            format!("{}", data.ncols()),
        ));
    }
    if data.nrows() == 0 {
        return Err(Error::invalid("cannot index an empty dataset"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite component in dataset"));
    }
    let reduced = project_rows(projection.b(), data);
    let primary = PrimaryStore::from_reduced(reduced.view(), params.primary_bits)?;
    let graph = graph::build(
        &PrimaryGraphView {
            store: &primary,
            metric: params.metric,
        },
        &params.graph,
    )?;
    let secondary = SecondaryStore::from_full(data, params.secondary)?;
    LeanVecIndex::from_parts(
        projection,
        primary,
        secondary,
        graph,
        params.metric,
        params.normalize_queries,
    )
}

impl LeanVecIndex {
    /// Assembles an index from its components, enforcing the cross-component
    /// invariants (dimensions, counts, and the shared-projection requirement
    /// for Euclidean search).
    pub fn from_parts(
        projection: ProjectionPair,
        primary: PrimaryStore,
        secondary: SecondaryStore,
        graph: GraphIndex,
        metric: Metric,
        normalize_queries: bool,
    ) -> Result<Self> {
        if primary.dim() != projection.reduced_dim() {
            return Err(Error::shape(
                format!("primary dimension {}", projection.reduced_dim()),
                format!("{}", primary.dim()),
            ));
        }
        if secondary.dim() != projection.source_dim() {
            return Err(Error::shape(
                format!("secondary dimension {}", projection.source_dim()),
                format!("{}", secondary.dim()),
            ));
        }
        if primary.len() != secondary.len() || primary.len() != graph.node_count() {
            return Err(Error::invalid(format!(
                "store sizes disagree: primary {}, secondary {}, graph {}",
                primary.len(),
                secondary.len(),
                graph.node_count()
            )));
        }
        if metric == Metric::Euclidean && !projection.is_shared() {
            return Err(Error::invalid(
                "euclidean search requires a shared projection (a = b); \
                 train with mode id or ood-es, or use the inner-product metric",
            ));
        }
        let a_runtime = matrix_f32(projection.a());
        Ok(LeanVecIndex {
            projection,
            a_runtime,
            primary,
            secondary,
            graph,
            metric,
            normalize_queries,
            projections_done: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.primary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primary.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn normalize_queries(&self) -> bool {
        self.normalize_queries
    }

    pub fn projection(&self) -> &ProjectionPair {
        &self.projection
    }

    pub fn primary(&self) -> &PrimaryStore {
        &self.primary
    }

    pub fn secondary(&self) -> &SecondaryStore {
        &self.secondary
    }

    pub fn graph(&self) -> &GraphIndex {
        &self.graph
    }

    /// Number of query projections performed so far; each search projects
    /// exactly once.
    pub fn projection_count(&self) -> u64 {
        self.projections_done.load(Ordering::Relaxed)
    }

    /// Searches with caller-provided scratch (the concurrent-friendly form).
    pub fn search_with_scratch(
        &self,
        query: &[f32],
        k: usize,
        params: &SearchParams,
        scratch: &mut SearchScratch,
    ) -> Result<QueryResult> {
        if query.len() != self.projection.source_dim() {
            return Err(Error::shape(
                format!("query of dimension {}", self.projection.source_dim()),
                format!("{}", query.len()),
            ));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite component in query"));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let n = self.len();
        if params.candidates_out() < k && k <= n {
            return Err(Error::invalid(format!(
                "candidates_out ({}) must be at least k ({k})",
                params.candidates_out()
            )));
        }

        let mut owned_query;
        let q = if self.normalize_queries {
            let norm = query.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            owned_query = query.to_vec();
            if norm > 0.0 {
                for v in &mut owned_query {
                    *v = ((*v as f64) / norm) as f32;
                }
            }
            owned_query.as_slice()
        } else {
            query
        };

        // The single projection of this search.
        let d = self.projection.reduced_dim();
        let mut reduced = vec![0.0f32; d];
        apply_projection(&self.a_runtime, d, self.projection.source_dim(), q, &mut reduced);
        self.projections_done.fetch_add(1, Ordering::Relaxed);

        if k >= n {
            // Degenerate ask: exact scan of everything.
            let all: Vec<u32> = (0..n as u32).collect();
            return Ok(rerank(&all, q, &self.secondary, self.metric, n));
        }

        let scorer = self.primary.scorer(self.metric, &reduced);
        let candidates = self.graph.search(scorer, params, scratch);
        let ids: Vec<u32> = candidates.iter().map(|c| c.id).collect();
        Ok(rerank(&ids, q, &self.secondary, self.metric, k))
    }

    /// One-off search allocating its own scratch.
    pub fn search(&self, query: &[f32], k: usize, params: &SearchParams) -> Result<QueryResult> {
        let mut scratch = SearchScratch::new();
        self.search_with_scratch(query, k, params, &mut scratch)
    }

    /// Fans a query batch across `threads` workers (0 = all cores); results
    /// are per-query deterministic regardless of the fan-out.
    pub fn search_batch(
        &self,
        queries: ArrayView2<f32>,
        k: usize,
        params: &SearchParams,
        threads: usize,
    ) -> Result<Vec<QueryResult>> {
        let rows: Vec<Vec<f32>> = queries.rows().into_iter().map(|r| r.to_vec()).collect();
        let run = || {
            rows.par_iter()
                .map_init(SearchScratch::new, |scratch, q| {
                    self.search_with_scratch(q, k, params, scratch)
                })
                .collect::<Result<Vec<QueryResult>>>()
        };
        if threads == 0 {
            run()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(run)
        }
    }
}

/// Exact re-scoring of candidate ids against the secondary store: stable
/// (similarity, id) ordering, top-`k` returned. With fewer than `k`
/// candidates, all of them come back.
pub fn rerank(
    candidates: &[u32],
    query: &[f32],
    secondary: &SecondaryStore,
    metric: Metric,
    k: usize,
) -> QueryResult {
    let mut scored: Vec<(f32, u32)> = candidates
        .iter()
        .map(|&id| (secondary.score(metric, query, id), id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.dedup_by_key(|&mut (_, id)| id);
    scored.truncate(k);
    QueryResult {
        ids: scored.iter().map(|&(_, id)| id).collect(),
        scores: scored.iter().map(|&(s, _)| s).collect(),
    }
}
