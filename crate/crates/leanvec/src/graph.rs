//! Fixed-degree directed graph over vector ids: greedy best-first search
//! with backtracking, alpha-occlusion pruning, and a two-pass incremental
//! build in the Vamana style.
//!
//! All scores flow through the graph as transformed distances where lower is
//! closer: squared Euclidean distance, or the negated inner product. The
//! occlusion test `alpha * dist(kept, c) <= dist(node, c)` is applied
//! literally on those values, which reproduces the usual `alpha > 1`
//! convention for Euclidean data and the `alpha < 1` convention for inner
//! product.

use std::sync::RwLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Choice of the search entry point made at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryPoint {
    /// Sample vector closest to the sample mean under the store's metric.
    Medoid,
    Fixed(u32),
}

#[derive(Debug, Clone)]
pub struct GraphBuildConfig {
    /// Maximum out-degree `R`.
    pub max_degree: usize,
    /// Search window `L` used for the per-node candidate searches.
    pub build_window: usize,
    /// Occlusion factor for the second pass; the first pass uses 1.0.
    pub prune_alpha: f32,
    pub entry_point: EntryPoint,
    pub seed: u64,
    /// 1 = deterministic sequential build; more = parallel build with
    /// per-node locks (non-deterministic edge sets, same recall contract).
    pub threads: usize,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        GraphBuildConfig {
            max_degree: 128,
            build_window: 200,
            prune_alpha: 1.2,
            entry_point: EntryPoint::Medoid,
            seed: 0,
            threads: 1,
        }
    }
}

impl GraphBuildConfig {
    fn validate(&self) -> Result<()> {
        if self.max_degree < 2 {
            return Err(Error::invalid("max_degree must be at least 2"));
        }
        if self.build_window < self.max_degree {
            return Err(Error::invalid("build_window must be at least max_degree"));
        }
        if !(self.prune_alpha.is_finite() && self.prune_alpha > 0.0) {
            return Err(Error::invalid("prune_alpha must be positive and finite"));
        }
        Ok(())
    }
}

/// Search-time knobs: the traversal pool size and how many candidates
/// survive into re-ranking.
#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    window: usize,
    candidates_out: usize,
}

impl SearchParams {
    pub fn new(window: usize, candidates_out: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("search window must be at least 1"));
        }
        if candidates_out == 0 || candidates_out > window {
            return Err(Error::invalid(
                "candidates_out must satisfy 1 <= candidates_out <= window",
            ));
        }
        Ok(SearchParams {
            window,
            candidates_out,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn candidates_out(&self) -> usize {
        self.candidates_out
    }
}

/// One search result: a node id and its transformed distance (lower closer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub dist: f32,
}

/// Vectors the graph is built over. Distances are transformed (lower is
/// closer) and must be finite.
pub trait GraphVectors: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Reconstructs vector `id` into `out` (length `dim`).
    fn decode_into(&self, id: u32, out: &mut [f32]);
    /// Transformed distance from an explicit query vector to vector `id`.
    fn dist_to(&self, query: &[f32], id: u32) -> f32;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scorer for many distances against one query; implementations can
    /// amortize per-query preparation across the scan.
    fn prepared_scorer<'a>(&'a self, query: &'a [f32]) -> Box<dyn Fn(u32) -> f32 + 'a> {
        Box::new(move |id| self.dist_to(query, id))
    }
}

/// Anything that can enumerate out-neighbors; implemented by the frozen
/// index and by the under-construction locked adjacency.
pub trait NeighborSource {
    fn node_count(&self) -> usize;
    fn copy_neighbors(&self, id: u32, out: &mut Vec<u32>);
}

/// Frozen search graph: per-node out-neighbor lists, an entry id, and the
/// degree bound they were built under.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphIndex {
    adjacency: Vec<Vec<u32>>,
    entry: u32,
    max_degree: usize,
}

impl GraphIndex {
    /// Validates and wraps an adjacency list (persistence path).
    pub fn from_parts(adjacency: Vec<Vec<u32>>, entry: u32, max_degree: usize) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        if entry as usize >= n {
            return Err(Error::invalid(format!("entry id {entry} out of range 0..{n}")));
        }
        for (id, list) in adjacency.iter().enumerate() {
            if list.len() > max_degree {
                return Err(Error::invalid(format!(
                    "node {id} has out-degree {} > {max_degree}",
                    list.len()
                )));
            }
            for &nb in list {
                if nb as usize >= n {
                    return Err(Error::invalid(format!("node {id} links to {nb} >= {n}")));
                }
                if nb as usize == id {
                    return Err(Error::invalid(format!("node {id} has a self-loop")));
                }
            }
        }
        Ok(GraphIndex {
            adjacency,
            entry,
            max_degree,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.adjacency[id as usize]
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    /// Number of nodes reachable from the entry point (BFS); used by tests
    /// and diagnostics.
    pub fn reachable_from_entry(&self) -> usize {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[self.entry as usize] = true;
        queue.push_back(self.entry);
        let mut count = 1;
        while let Some(id) = queue.pop_front() {
            for &nb in self.neighbors(id) {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    count += 1;
                    queue.push_back(nb);
                }
            }
        }
        count
    }

    /// Greedy best-first search over the frozen graph.
    pub fn search(
        &self,
        dist: impl FnMut(u32) -> f32,
        params: &SearchParams,
        scratch: &mut SearchScratch,
    ) -> Vec<Candidate> {
        greedy_search(self, self.entry, dist, params, scratch)
    }
}

impl NeighborSource for GraphIndex {
    fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    fn copy_neighbors(&self, id: u32, out: &mut Vec<u32>) {
        out.extend_from_slice(&self.adjacency[id as usize]);
    }
}

/// Epoch-stamped visited set, reusable across queries without clearing.
#[derive(Debug, Default)]
pub struct VisitedSet {
    stamps: Vec<u32>,
    epoch: u32,
}

impl VisitedSet {
    pub fn begin(&mut self, n: usize) {
        if self.stamps.len() < n {
            self.stamps.resize(n, 0);
        }
        if self.epoch == u32::MAX {
            self.stamps.fill(0);
            self.epoch = 0;
        }
        self.epoch += 1;
    }

    /// Returns true the first time `id` is inserted in the current epoch.
    pub fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.stamps[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PoolEntry {
    dist: f32,
    id: u32,
    expanded: bool,
}

/// Reusable per-query search state.
#[derive(Debug, Default)]
pub struct SearchScratch {
    visited: VisitedSet,
    pool: Vec<PoolEntry>,
    neigh: Vec<u32>,
}

impl SearchScratch {
    pub fn new() -> Self {
        Self::default()
    }
}

fn pool_key(e: &PoolEntry) -> (f32, u32) {
    (e.dist, e.id)
}

/// Best-first traversal with backtracking. A pool of at most `window`
/// candidates is kept sorted by (distance, id); the closest unexpanded
/// member is expanded until none remains, i.e. until no unexpanded
/// candidate could improve the worst retained result. Every node is scored
/// at most once per query.
pub fn greedy_search(
    graph: &impl NeighborSource,
    entry: u32,
    mut dist: impl FnMut(u32) -> f32,
    params: &SearchParams,
    scratch: &mut SearchScratch,
) -> Vec<Candidate> {
    let n = graph.node_count();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!((entry as usize) < n);
    scratch.visited.begin(n);
    scratch.pool.clear();

    scratch.visited.insert(entry);
    scratch.pool.push(PoolEntry {
        dist: dist(entry),
        id: entry,
        expanded: false,
    });

    while let Some(best) = scratch.pool.iter().position(|e| !e.expanded) {
        scratch.pool[best].expanded = true;
        let node = scratch.pool[best].id;

        scratch.neigh.clear();
        graph.copy_neighbors(node, &mut scratch.neigh);
        for i in 0..scratch.neigh.len() {
            let nb = scratch.neigh[i];
            if !scratch.visited.insert(nb) {
                continue;
            }
            let d = dist(nb);
            let entry = PoolEntry {
                dist: d,
                id: nb,
                expanded: false,
            };
            if scratch.pool.len() >= params.window {
                let worst = scratch.pool.last().unwrap();
                if pool_key(&entry) >= pool_key(worst) {
                    continue;
                }
                scratch.pool.pop();
            }
            let pos = scratch
                .pool
                .partition_point(|e| pool_key(e) < pool_key(&entry));
            scratch.pool.insert(pos, entry);
        }
    }

    scratch
        .pool
        .iter()
        .take(params.candidates_out)
        .map(|e| Candidate {
            id: e.id,
            dist: e.dist,
        })
        .collect()
}

/// Alpha-occlusion pruning: candidates are visited by increasing distance to
/// `node`, and candidate `c` is kept unless some already-kept `p` satisfies
/// `alpha * dist(p, c) <= dist(node, c)`. At most `max_degree` survive, in
/// distance order.
///
/// `dist_between` is always called with the candidate as the first argument,
/// so callers can cache per-candidate work (one decode per candidate).
pub fn robust_prune(
    node: u32,
    candidates: &[Candidate],
    alpha: f32,
    max_degree: usize,
    mut dist_between: impl FnMut(u32, u32) -> f32,
) -> Vec<u32> {
    let mut sorted: Vec<Candidate> = candidates.iter().copied().filter(|c| c.id != node).collect();
    sorted.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
    sorted.dedup_by_key(|c| c.id);

    let mut kept: Vec<u32> = Vec::with_capacity(max_degree.min(sorted.len()));
    for c in &sorted {
        if kept.len() >= max_degree {
            break;
        }
        let occluded = kept
            .iter()
            .any(|&p| alpha * dist_between(c.id, p) <= c.dist);
        if !occluded {
            kept.push(c.id);
        }
    }
    kept
}

/// Adjacency under construction: one lock per node so parallel inserts only
/// contend on the lists they touch.
struct BuildAdjacency {
    lists: Vec<RwLock<Vec<u32>>>,
}

impl NeighborSource for BuildAdjacency {
    fn node_count(&self) -> usize {
        self.lists.len()
    }

    fn copy_neighbors(&self, id: u32, out: &mut Vec<u32>) {
        out.extend_from_slice(&self.lists[id as usize].read().unwrap());
    }
}

/// Per-worker state for the build loop.
struct BuildScratch {
    search: SearchScratch,
    node_vec: Vec<f32>,
    from_vec: Vec<f32>,
    rev_vec: Vec<f32>,
    existing: Vec<u32>,
}

impl BuildScratch {
    fn new(dim: usize) -> Self {
        BuildScratch {
            search: SearchScratch::new(),
            node_vec: vec![0.0; dim],
            from_vec: vec![0.0; dim],
            rev_vec: vec![0.0; dim],
            existing: Vec::new(),
        }
    }
}

/// Builds the graph: two passes over a seed-fixed pseudo-random permutation
/// of all nodes (first pass with `alpha = 1`, second with the configured
/// alpha). Each visit searches the current graph with the node as the query,
/// prunes the union of the search pool and the current neighbors, installs
/// the pruned list, and inserts reverse edges with immediate re-pruning on
/// overflow.
pub fn build<V: GraphVectors>(store: &V, config: &GraphBuildConfig) -> Result<GraphIndex> {
    config.validate()?;
    let n = store.len();
    if n == 0 {
        return Err(Error::invalid("cannot build a graph over an empty store"));
    }
    if n > u32::MAX as usize {
        return Err(Error::invalid("store exceeds u32 id space"));
    }

    let entry = match config.entry_point {
        EntryPoint::Fixed(id) => {
            if id as usize >= n {
                return Err(Error::invalid(format!("fixed entry {id} out of range 0..{n}")));
            }
            id
        }
        EntryPoint::Medoid => medoid(store),
    };

    let adjacency = BuildAdjacency {
        lists: (0..n).map(|_| RwLock::new(Vec::new())).collect(),
    };

    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    perm.shuffle(&mut rng);

    let params = SearchParams::new(config.build_window, config.build_window)?;
    for pass_alpha in [1.0f32, config.prune_alpha] {
        if config.threads <= 1 {
            let mut scratch = BuildScratch::new(store.dim());
            for &node in &perm {
                insert_node(store, &adjacency, entry, node, pass_alpha, config, &params, &mut scratch);
            }
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| {
                perm.par_iter().for_each_init(
                    || BuildScratch::new(store.dim()),
                    |scratch, &node| {
                        insert_node(store, &adjacency, entry, node, pass_alpha, config, &params, scratch);
                    },
                );
            });
        }
    }

    let lists: Vec<Vec<u32>> = adjacency
        .lists
        .into_iter()
        .map(|l| l.into_inner().unwrap())
        .collect();
    GraphIndex::from_parts(lists, entry, config.max_degree)
}

#[allow(clippy::too_many_arguments)]
fn insert_node<V: GraphVectors>(
    store: &V,
    adjacency: &BuildAdjacency,
    entry: u32,
    node: u32,
    alpha: f32,
    config: &GraphBuildConfig,
    params: &SearchParams,
    scratch: &mut BuildScratch,
) {
    store.decode_into(node, &mut scratch.node_vec);

    let candidates = {
        let scorer = store.prepared_scorer(&scratch.node_vec);
        let mut candidates =
            greedy_search(adjacency, entry, &scorer, params, &mut scratch.search);
        scratch.existing.clear();
        adjacency.copy_neighbors(node, &mut scratch.existing);
        for &nb in &scratch.existing {
            if nb != node && !candidates.iter().any(|c| c.id == nb) {
                candidates.push(Candidate {
                    id: nb,
                    dist: scorer(nb),
                });
            }
        }
        candidates
    };

    // Candidate-first calls let one decode serve the whole occlusion row.
    let mut cached_id = u32::MAX;
    let new_list = {
        let from_vec = &mut scratch.from_vec;
        robust_prune(node, &candidates, alpha, config.max_degree, |a, b| {
            if a != cached_id {
                store.decode_into(a, from_vec);
                cached_id = a;
            }
            store.dist_to(from_vec, b)
        })
    };

    *adjacency.lists[node as usize].write().unwrap() = new_list.clone();

    for &nb in &new_list {
        let mut list = adjacency.lists[nb as usize].write().unwrap();
        if list.contains(&node) {
            continue;
        }
        list.push(node);
        if list.len() > config.max_degree {
            store.decode_into(nb, &mut scratch.rev_vec);
            let overflow: Vec<Candidate> = {
                let scorer = store.prepared_scorer(&scratch.rev_vec);
                list.iter()
                    .map(|&z| Candidate {
                        id: z,
                        dist: scorer(z),
                    })
                    .collect()
            };
            let mut cached_id = u32::MAX;
            let from_vec = &mut scratch.from_vec;
            *list = robust_prune(nb, &overflow, alpha, config.max_degree, |a, b| {
                if a != cached_id {
                    store.decode_into(a, from_vec);
                    cached_id = a;
                }
                store.dist_to(from_vec, b)
            });
        }
    }
}

/// Entry-point selection: mean of a stride sample (at most 10k vectors),
/// then the sample vector closest to that mean under the store's metric.
fn medoid<V: GraphVectors>(store: &V) -> u32 {
    let n = store.len();
    let max_sample = 10_000usize;
    let stride = n.div_ceil(max_sample).max(1);
    let sample: Vec<u32> = (0..n).step_by(stride).map(|i| i as u32).collect();

    let dim = store.dim();
    let mut mean = vec![0.0f64; dim];
    let mut buf = vec![0.0f32; dim];
    for &id in &sample {
        store.decode_into(id, &mut buf);
        for (m, &v) in mean.iter_mut().zip(buf.iter()) {
            *m += v as f64;
        }
    }
    let inv = 1.0 / sample.len() as f64;
    let mean_f32: Vec<f32> = mean.iter().map(|&m| (m * inv) as f32).collect();

    let mut best = (f32::INFINITY, 0u32);
    for &id in &sample {
        let d = store.dist_to(&mean_f32, id);
        if (d, id) < best {
            best = (d, id);
        }
    }
    best.1
}
