//! Primary (reduced, optionally quantized) and secondary (full-dimensional)
//! vector stores, plus the exact scoring kernels shared by re-ranking and
//! ground-truth generation.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lvq::{LvqQueryPrep, LvqStore};

/// Similarity metric of an index. Cosine similarity is handled upstream by
/// normalizing vectors at ingestion and searching with the inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    InnerProduct,
    Euclidean,
}

/// Exact scores accumulate in 32-bit within fixed blocks and reduce across
/// blocks in 64-bit, so precision does not degrade for D > 512.
const EXACT_BLOCK: usize = 512;

/// Exact inner product with blocked accumulation.
pub fn exact_dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0.0f64;
    for (ca, cb) in a.chunks(EXACT_BLOCK).zip(b.chunks(EXACT_BLOCK)) {
        let mut acc = 0.0f32;
        for (x, y) in ca.iter().zip(cb.iter()) {
            acc += x * y;
        }
        total += acc as f64;
    }
    total as f32
}

/// Exact squared Euclidean distance with blocked accumulation.
pub fn exact_l2sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0.0f64;
    for (ca, cb) in a.chunks(EXACT_BLOCK).zip(b.chunks(EXACT_BLOCK)) {
        let mut acc = 0.0f32;
        for (x, y) in ca.iter().zip(cb.iter()) {
            let d = x - y;
            acc += d * d;
        }
        total += acc as f64;
    }
    total as f32
}

/// Similarity of `q` and `x` under `metric`: the inner product, or the
/// negated squared Euclidean distance so that higher is always better.
pub fn similarity(metric: Metric, q: &[f32], x: &[f32]) -> f32 {
    match metric {
        Metric::InnerProduct => exact_dot(q, x),
        Metric::Euclidean => -exact_l2sq(q, x),
    }
}

/// Drops the low 13 mantissa bits, the half-precision storage mode for
/// secondary vectors. Accuracy contracts hold only for the full 32-bit and
/// LVQ8 modes.
pub fn truncate_to_half(v: f32) -> f32 {
    f32::from_bits(v.to_bits() & 0xffff_e000)
}

/// Reduced-dimension vectors the graph is built on and traversed with.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimaryStore {
    Float { dim: usize, data: Vec<f32> },
    Lvq(LvqStore),
}

impl PrimaryStore {
    /// Wraps already-reduced vectors, quantizing when `bits` is given.
    pub fn from_reduced(reduced: ArrayView2<f32>, bits: Option<(u8, u8)>) -> Result<Self> {
        if reduced.nrows() == 0 || reduced.ncols() == 0 {
            return Err(Error::invalid("primary store requires a non-empty matrix"));
        }
        match bits {
            Some((b1, b2)) => Ok(PrimaryStore::Lvq(LvqStore::encode_all(reduced, b1, b2)?)),
            None => Ok(PrimaryStore::Float {
                dim: reduced.ncols(),
                data: reduced.iter().copied().collect(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PrimaryStore::Float { dim, data } => data.len() / dim,
            PrimaryStore::Lvq(store) => store.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            PrimaryStore::Float { dim, .. } => *dim,
            PrimaryStore::Lvq(store) => store.dim(),
        }
    }

    /// First- and second-level bit widths; `(0, 0)` for the float store.
    pub fn bits(&self) -> (u8, u8) {
        match self {
            PrimaryStore::Float { .. } => (0, 0),
            PrimaryStore::Lvq(store) => (store.codec().b1(), store.codec().b2()),
        }
    }

    pub fn decode_into(&self, id: u32, out: &mut [f32]) {
        match self {
            PrimaryStore::Float { dim, data } => {
                let base = id as usize * dim;
                out.copy_from_slice(&data[base..base + dim]);
            }
            PrimaryStore::Lvq(store) => store.decode_into(id, out),
        }
    }

    /// Transformed distance of stored vector `id` to the reduced query
    /// (lower is closer): negated inner product, or squared Euclidean.
    pub fn dist_to(&self, metric: Metric, query: &[f32], id: u32) -> f32 {
        match (self, metric) {
            (PrimaryStore::Float { dim, data }, Metric::InnerProduct) => {
                let base = id as usize * dim;
                -exact_dot(query, &data[base..base + dim])
            }
            (PrimaryStore::Float { dim, data }, Metric::Euclidean) => {
                let base = id as usize * dim;
                exact_l2sq(query, &data[base..base + dim])
            }
            (PrimaryStore::Lvq(store), Metric::InnerProduct) => {
                let prep = store.codec().prepare_query(query);
                -(store.inner_product(&prep, query, id) as f32)
            }
            (PrimaryStore::Lvq(store), Metric::Euclidean) => store.l2sq(query, id) as f32,
        }
    }

    /// Per-query scorer amortizing the LVQ query preparation across a scan.
    pub fn scorer<'q>(&'q self, metric: Metric, query: &'q [f32]) -> impl Fn(u32) -> f32 + 'q {
        let prep: Option<LvqQueryPrep> = match (self, metric) {
            (PrimaryStore::Lvq(store), Metric::InnerProduct) => {
                Some(store.codec().prepare_query(query))
            }
            _ => None,
        };
        move |id| match (self, prep) {
            (PrimaryStore::Lvq(store), Some(p)) => -(store.inner_product(&p, query, id) as f32),
            _ => self.dist_to(metric, query, id),
        }
    }
}

/// Storage mode for the secondary (full-dimensional) vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondaryMode {
    F32 { half: bool },
    Lvq8,
}

/// Full-dimensional vectors used to re-rank candidates exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum SecondaryStore {
    Float { dim: usize, data: Vec<f32>, half: bool },
    Lvq8(LvqStore),
}

impl SecondaryStore {
    pub fn from_full(data: ArrayView2<f32>, mode: SecondaryMode) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("secondary store requires a non-empty matrix"));
        }
        match mode {
            SecondaryMode::F32 { half } => {
                let stored: Vec<f32> = if half {
                    data.iter().map(|&v| truncate_to_half(v)).collect()
                } else {
                    data.iter().copied().collect()
                };
                Ok(SecondaryStore::Float {
                    dim: data.ncols(),
                    data: stored,
                    half,
                })
            }
            SecondaryMode::Lvq8 => Ok(SecondaryStore::Lvq8(LvqStore::encode_all(data, 8, 0)?)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SecondaryStore::Float { dim, data, .. } => data.len() / dim,
            SecondaryStore::Lvq8(store) => store.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            SecondaryStore::Float { dim, .. } => *dim,
            SecondaryStore::Lvq8(store) => store.dim(),
        }
    }

    pub fn mode(&self) -> SecondaryMode {
        match self {
            SecondaryStore::Float { half, .. } => SecondaryMode::F32 { half: *half },
            SecondaryStore::Lvq8(_) => SecondaryMode::Lvq8,
        }
    }

    /// Similarity of stored vector `id` to the full-dimensional query;
    /// higher is better under either metric.
    pub fn score(&self, metric: Metric, query: &[f32], id: u32) -> f32 {
        match self {
            SecondaryStore::Float { dim, data, .. } => {
                let base = id as usize * dim;
                similarity(metric, query, &data[base..base + dim])
            }
            SecondaryStore::Lvq8(store) => match metric {
                Metric::InnerProduct => {
                    let prep = store.codec().prepare_query(query);
                    store.inner_product(&prep, query, id) as f32
                }
                Metric::Euclidean => -(store.l2sq(query, id) as f32),
            },
        }
    }
}
