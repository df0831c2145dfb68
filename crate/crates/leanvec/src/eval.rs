//! Ground-truth generation, recall, and the throughput harness.

use std::io::Write;
use std::time::Instant;

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SearchParams;
use crate::pipeline::LeanVecIndex;
use crate::store::{similarity, Metric};

/// Exact top-`k` ids per query, ordered by descending similarity with
/// ascending-id tie-breaks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub metric: Metric,
    pub k: usize,
    pub ids: Vec<Vec<u32>>,
}

/// Exhaustive scan of the dataset for every query. This is the reference
/// the graph search is measured against; with exhaustive parameters the two
/// must agree exactly.
pub fn brute_force_topk(
    data: ArrayView2<f32>,
    queries: ArrayView2<f32>,
    k: usize,
    metric: Metric,
) -> Result<GroundTruth> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "k must satisfy 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    if data.ncols() != queries.ncols() {
        return Err(Error::shape(
            format!("queries of dimension {}", data.ncols()),
            format!("{}", queries.ncols()),
        ));
    }
    let rows: Vec<Vec<f32>> = data.rows().into_iter().map(|r| r.to_vec()).collect();
    let ids: Vec<Vec<u32>> = queries
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect::<Vec<_>>()
        .par_iter()
        .map(|q| {
            let mut scored: Vec<(f32, u32)> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| (similarity(metric, q, row), i as u32))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(k).map(|(_, id)| id).collect()
        })
        .collect();
    Ok(GroundTruth { metric, k, ids })
}

/// `k`-recall@`k`: both lists truncated to `k`, then `|S ∩ G| / k`.
pub fn recall(result: &[u32], truth: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("recall requires k >= 1"));
    }
    if result.len() < k || truth.len() < k {
        return Err(Error::invalid(format!(
            "recall@{k} needs at least k ids on both sides, got {} and {}",
            result.len(),
            truth.len()
        )));
    }
    let s: std::collections::HashSet<u32> = result[..k].iter().copied().collect();
    let hits = truth[..k].iter().filter(|id| s.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

/// Mean recall@k of a batch of result id lists against the ground truth.
pub fn mean_recall(results: &[Vec<u32>], truth: &GroundTruth, k: usize) -> Result<f64> {
    if results.len() != truth.ids.len() {
        return Err(Error::invalid(format!(
            "result count {} does not match truth count {}",
            results.len(),
            truth.ids.len()
        )));
    }
    let mut acc = 0.0;
    for (res, tru) in results.iter().zip(truth.ids.iter()) {
        acc += recall(res, tru, k)?;
    }
    Ok(acc / results.len() as f64)
}

/// One (window, candidates_out) configuration of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub window: usize,
    pub candidates_out: usize,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub window: usize,
    pub candidates_out: usize,
    pub recall: f64,
    pub qps: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub k: usize,
    pub runs: usize,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub k: usize,
    /// Repetitions per configuration; the best run's throughput is reported.
    pub runs: usize,
    /// Worker count for query fan-out (0 = all cores).
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            k: 10,
            runs: 10,
            threads: 0,
        }
    }
}

impl BenchReport {
    /// CSV with the stable column order `W,candidates_out,recall_at_10,qps,wall_ms`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "W,candidates_out,recall_at_10,qps,wall_ms")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{:.2},{:.3}",
                row.window, row.candidates_out, row.recall, row.qps, row.wall_ms
            )?;
        }
        Ok(())
    }
}

/// Runs the sweep: for every configuration, all queries are executed
/// `opts.runs` times; the best run sets qps and wall_ms, while recall comes
/// from the first run (results are deterministic, so it is run-invariant).
pub fn bench(
    index: &LeanVecIndex,
    queries: ArrayView2<f32>,
    truth: &GroundTruth,
    sweep: &[SweepPoint],
    opts: &BenchOptions,
) -> Result<BenchReport> {
    if truth.ids.len() != queries.nrows() {
        return Err(Error::invalid(format!(
            "ground truth covers {} queries, got {}",
            truth.ids.len(),
            queries.nrows()
        )));
    }
    if truth.k < opts.k {
        return Err(Error::invalid(format!(
            "ground truth depth {} is below k = {}",
            truth.k, opts.k
        )));
    }
    if opts.runs == 0 || sweep.is_empty() {
        return Err(Error::invalid("bench needs runs >= 1 and a non-empty sweep"));
    }
    let nq = queries.nrows();
    let mut rows = Vec::with_capacity(sweep.len());
    for point in sweep {
        let params = SearchParams::new(point.window, point.candidates_out)?;
        let mut best_qps = 0.0f64;
        let mut best_wall_ms = f64::INFINITY;
        let mut recall_value = 0.0;
        for run in 0..opts.runs {
            let started = Instant::now();
            let results = index.search_batch(queries, opts.k, &params, opts.threads)?;
            let elapsed = started.elapsed().as_secs_f64();
            let qps = nq as f64 / elapsed.max(1e-12);
            if qps > best_qps {
                best_qps = qps;
                best_wall_ms = elapsed * 1e3;
            }
            if run == 0 {
                let ids: Vec<Vec<u32>> = results.into_iter().map(|r| r.ids).collect();
                recall_value = mean_recall(&ids, truth, opts.k)?;
            }
        }
        rows.push(BenchRow {
            window: point.window,
            candidates_out: point.candidates_out,
            recall: recall_value,
            qps: best_qps,
            wall_ms: best_wall_ms,
        });
    }
    Ok(BenchReport {
        k: opts.k,
        runs: opts.runs,
        rows,
    })
}
