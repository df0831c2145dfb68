//! Acceptance suite: one test per criterion, each printing a PASS line once
//! its assertions hold. Instances are synthetic and seed-fixed, so every
//! number asserted here is reproducible.

use leanvec::graph::{self, GraphBuildConfig, SearchParams, SearchScratch};
use leanvec::linalg::{accumulate_gram, stiefel_retract};
use leanvec::lvq::LvqCodec;
use leanvec::pipeline::{build_index, project_rows, rerank, IndexBuildParams, PrimaryGraphView};
use leanvec::projection::{
    ood_gradients, ood_loss, subsample_rows, train_grams, train_id, train_ood_es, train_ood_fw,
    FwConfig, ProjectionPair,
};
use leanvec::storage::{load_index, save_index};
use leanvec::store::{Metric, PrimaryStore, SecondaryMode, SecondaryStore};
use leanvec::{brute_force_topk, mean_recall, recall, GramPair, LeanVecIndex, Termination};
use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

fn stiefel(rng: &mut ChaCha8Rng, d: usize, dim: usize) -> Array2<f64> {
    stiefel_retract(normal_matrix(rng, d, dim).view()).unwrap()
}

fn to_f32(m: &Array2<f64>) -> Array2<f32> {
    m.mapv(|v| v as f32)
}

/// Random vectors with decaying per-direction scales under a fixed rotation.
fn shaped_vectors(rng: &mut ChaCha8Rng, n: usize, rot: &Array2<f64>) -> Array2<f32> {
    let dim = rot.nrows();
    let mut latent = normal_matrix(rng, n, dim);
    for mut row in latent.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v /= (1.0 + j as f64).sqrt();
        }
    }
    to_f32(&latent.dot(rot))
}

struct TrainInstance {
    grams: GramPair,
}

/// D=64, d=16, n=2000, m=500 training instances; the OOD variant draws its
/// queries under an independent rotation.
fn training_instance(seed: u64, ood: bool) -> TrainInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 64;
    let rot_x = stiefel(&mut rng, dim, dim);
    let data = shaped_vectors(&mut rng, 2000, &rot_x);
    let rot_q = if ood { stiefel(&mut rng, dim, dim) } else { rot_x.clone() };
    let queries = shaped_vectors(&mut rng, 500, &rot_q);
    TrainInstance {
        grams: train_grams(queries.view(), data.view()).unwrap(),
    }
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (dim, d) = (10, 3);
        let q = to_f32(&normal_matrix(&mut rng, 60, dim));
        let x = to_f32(&normal_matrix(&mut rng, 60, dim));
        let grams = GramPair::new(
            accumulate_gram(q.view()).unwrap(),
            accumulate_gram(x.view()).unwrap(),
            60,
            60,
        )
        .unwrap();
        // Interior hull points so finite-difference probes stay feasible.
        let a = stiefel(&mut rng, d, dim) * 0.99;
        let b = stiefel(&mut rng, d, dim) * 0.99;
        let pair = ProjectionPair::new(a.clone(), b.clone(), false).unwrap();
        let (ga, gb) = ood_gradients(&pair, &grams).unwrap();
        let loss_at = |a: &Array2<f64>, b: &Array2<f64>| {
            ood_loss(
                &ProjectionPair::new(a.clone(), b.clone(), false).unwrap(),
                &grams,
            )
            .unwrap()
        };
        for i in 0..d {
            for j in 0..dim {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[(i, j)] += h;
                am[(i, j)] -= h;
                let fd = (loss_at(&ap, &b) - loss_at(&am, &b)) / (2.0 * h);
                worst = worst.max((fd - ga[(i, j)]).abs());
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[(i, j)] += h;
                bm[(i, j)] -= h;
                let fd = (loss_at(&a, &bp) - loss_at(&a, &bm)) / (2.0 * h);
                worst = worst.max((fd - gb[(i, j)]).abs());
            }
        }
    }
    assert!(worst <= 1e-4, "max finite-difference error {worst}");
    println!("criterion 1 PASS: gradient vs central differences, max error {worst:.3e} <= 1e-4");
}

#[test]
fn criterion_02_trace_loss_equals_materialized_frobenius() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(330 + seed);
        let (dim, d, n, m) = (12, 4, 40, 40);
        let q = to_f32(&normal_matrix(&mut rng, m, dim));
        let x = to_f32(&normal_matrix(&mut rng, n, dim));
        let grams = GramPair::new(
            accumulate_gram(q.view()).unwrap(),
            accumulate_gram(x.view()).unwrap(),
            m,
            n,
        )
        .unwrap();
        let a = stiefel(&mut rng, d, dim);
        let b = stiefel(&mut rng, d, dim);
        let pair = ProjectionPair::new(a.clone(), b.clone(), true).unwrap();
        let fast = ood_loss(&pair, &grams).unwrap();
        let qt = q.mapv(|v| v as f64);
        let xt = x.mapv(|v| v as f64);
        let resid = qt.dot(&a.t()).dot(&b).dot(&xt.t()) - qt.dot(&xt.t());
        let slow: f64 = resid.iter().map(|v| v * v).sum();
        worst = worst.max((fast - slow).abs() / slow.max(1e-12));
    }
    assert!(worst <= 1e-5, "max relative discrepancy {worst}");
    println!("criterion 2 PASS: trace form vs Frobenius form, max relative error {worst:.3e} <= 1e-5");
}

#[test]
fn criterion_03_optimizers_never_lose_to_pca() {
    for (ood, base_seed) in [(false, 360u64), (true, 380u64)] {
        for seed in 0..10u64 {
            let inst = training_instance(base_seed + seed, ood);
            let pca = train_id(inst.grams.k_x.view(), 16).unwrap();
            let pca_loss = ood_loss(&pca, &inst.grams).unwrap();
            let (fw, _) = train_ood_fw(&inst.grams, 16, &FwConfig::default()).unwrap();
            let fw_loss = ood_loss(&fw, &inst.grams).unwrap();
            let (es, _) = train_ood_es(&inst.grams, 16).unwrap();
            let es_loss = ood_loss(&es, &inst.grams).unwrap();
            let best = fw_loss.min(es_loss);
            assert!(
                best <= pca_loss * 1.01,
                "instance ood={ood} seed={seed}: min({fw_loss}, {es_loss}) > 1.01 * {pca_loss}"
            );
        }
    }
    println!("criterion 3 PASS: min(loss_fw, loss_es) <= 1.01 * PCA loss on 10 ID + 10 OOD instances");
}

#[test]
fn criterion_04_frank_wolfe_terminates_cleanly() {
    for (ood, base_seed) in [(false, 360u64), (true, 380u64)] {
        for seed in 0..10u64 {
            let inst = training_instance(base_seed + seed, ood);
            let (_, report) = train_ood_fw(&inst.grams, 16, &FwConfig::default()).unwrap();
            assert_eq!(
                report.termination,
                Termination::Tolerance,
                "ood={ood} seed={seed} hit the iteration cap"
            );
            assert!(report.iterations_run <= 500);
            for (&ga, &gb) in report.gaps_a.iter().zip(report.gaps_b.iter()) {
                assert!(ga >= -1e-8, "negative gap_a {ga}");
                assert!(gb >= -1e-8, "negative gap_b {gb}");
            }
            let mut running = f64::INFINITY;
            let mut prev_env = f64::INFINITY;
            for &l in &report.losses {
                running = running.min(l);
                assert!(running <= prev_env);
                prev_env = running;
            }
        }
    }
    println!("criterion 4 PASS: tolerance termination within T=500, nonnegative gaps, monotone loss envelope");
}

#[test]
fn criterion_05_retraction_penalty_is_small() {
    let mut worst = f64::NEG_INFINITY;
    for (ood, base_seed) in [(false, 360u64), (true, 380u64)] {
        for seed in 0..10u64 {
            let inst = training_instance(base_seed + seed, ood);
            let (_, report) = train_ood_fw(&inst.grams, 16, &FwConfig::default()).unwrap();
            let before = report.loss_before_retraction.unwrap();
            let after = report.loss_after_retraction.unwrap();
            let penalty = (after - before) / before.max(1e-30);
            worst = worst.max(penalty);
            assert!(
                penalty <= 1e-2,
                "ood={ood} seed={seed}: retraction penalty {penalty}"
            );
        }
    }
    println!("criterion 5 PASS: relative retraction penalty <= 1e-2 (worst {worst:.3e})");
}

#[test]
fn criterion_06_eigenvector_search_matches_dense_grid() {
    // Rotated-query OOD instance: the beta minimizer sits in the interior.
    let inst = training_instance(412, true);
    let (es, beta) = train_ood_es(&inst.grams, 16).unwrap();
    let es_loss = ood_loss(&es, &inst.grams).unwrap();
    let mut grid_best = f64::INFINITY;
    for i in 0..=100 {
        let b = i as f64 / 100.0;
        let wq = (1.0 - b) / inst.grams.m as f64;
        let wx = b / inst.grams.n as f64;
        let kb = &inst.grams.k_q * wq + &inst.grams.k_x * wx;
        let p = leading_projection(kb.view(), 16);
        grid_best = grid_best.min(ood_loss(&p, &inst.grams).unwrap());
    }
    assert!(
        es_loss <= grid_best * (1.0 + 1e-6),
        "es loss {es_loss} (beta {beta}) vs grid {grid_best}"
    );

    // Exact ID case: K_Q / m == K_X / n makes the profile constant in beta.
    let mut rng = ChaCha8Rng::seed_from_u64(414);
    let x = to_f32(&normal_matrix(&mut rng, 200, 16));
    let k_x = accumulate_gram(x.view()).unwrap();
    let (m, n) = (50usize, 200usize);
    let k_q = &k_x * (m as f64 / n as f64);
    let grams = GramPair::new(k_q, k_x, m, n).unwrap();
    let mut losses = Vec::new();
    for i in 0..=100 {
        let b = i as f64 / 100.0;
        let wq = (1.0 - b) / grams.m as f64;
        let wx = b / grams.n as f64;
        let kb = &grams.k_q * wq + &grams.k_x * wx;
        let p = leading_projection(kb.view(), 4);
        losses.push(ood_loss(&p, &grams).unwrap());
    }
    let base = losses[0].abs().max(1e-30);
    for &l in &losses {
        assert!(
            (l - losses[0]).abs() <= 1e-8 * base,
            "beta profile varies: {l} vs {}",
            losses[0]
        );
    }
    println!("criterion 6 PASS: ES <= 101-point grid minimum * (1 + 1e-6); flat profile in the exact ID case");
}

/// Shared-projection pair from the d leading eigenvectors of `k`.
fn leading_projection(k: ArrayView2<f64>, d: usize) -> ProjectionPair {
    let eig = leanvec::linalg::sym_eig(k).unwrap();
    let dim = k.nrows();
    let mut p = Array2::zeros((d, dim));
    for r in 0..d {
        for c in 0..dim {
            p[(r, c)] = eig.vectors[(c, r)];
        }
    }
    ProjectionPair::shared(p, true).unwrap()
}

#[test]
fn criterion_07_lvq_error_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(420);
    let dim = 24;
    for b1 in [4u8, 8u8] {
        let one = LvqCodec::from_parts(vec![0.0; dim], b1, 0).unwrap();
        let two = LvqCodec::from_parts(vec![0.0; dim], b1, 8).unwrap();
        for i in 0..1000 {
            let x: Vec<f32> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect();
            let c1 = one.encode(&x).unwrap();
            let d1 = one.decode(c1.as_ref()).unwrap();
            let mut sq1 = 0.0f64;
            for (v, &orig) in d1.iter().zip(x.iter()) {
                let e = v - orig as f64;
                assert!(e.abs() <= c1.delta / 2.0 + 1e-9, "b1={b1} vec {i}");
                sq1 += e * e;
            }
            let c2 = two.encode(&x).unwrap();
            let d2 = two.decode(c2.as_ref()).unwrap();
            let sq2: f64 = d2
                .iter()
                .zip(x.iter())
                .map(|(v, &orig)| (v - orig as f64).powi(2))
                .sum();
            if c2.delta > 0.0 {
                assert!(sq2 < sq1, "b1={b1} vec {i}: two-level {sq2} >= one-level {sq1}");
            }

            let q: Vec<f32> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect();
            let fast = two.inner_product(c2.as_ref(), &q).unwrap();
            let slow: f64 = d2.iter().zip(q.iter()).map(|(&v, &qj)| v * qj as f64).sum();
            assert!(
                (fast - slow).abs() <= 1e-5 * slow.abs().max(1e-9),
                "quantized ip {fast} vs materialized {slow}"
            );
        }
    }
    println!("criterion 7 PASS: one-level error <= delta/2, two-level strictly tighter, quantized ip within 1e-5");
}

#[test]
fn criterion_08_oracle_equivalence_on_complete_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(430);
    let n = 1000;
    let dim = 32;
    let data = to_f32(&normal_matrix(&mut rng, n, dim));
    let queries = to_f32(&normal_matrix(&mut rng, 200, dim));

    for metric in [Metric::InnerProduct, Metric::Euclidean] {
        let truth = brute_force_topk(data.view(), queries.view(), 10, metric).unwrap();

        // Route 1: raw greedy search over an explicit complete graph.
        let adjacency: Vec<Vec<u32>> = (0..n)
            .map(|i| (0..n as u32).filter(|&j| j != i as u32).collect())
            .collect();
        let complete = graph::GraphIndex::from_parts(adjacency, 0, n).unwrap();
        let store = PrimaryStore::from_reduced(data.view(), None).unwrap();
        let params = SearchParams::new(n, 10).unwrap();
        let mut scratch = SearchScratch::new();
        for (qi, row) in queries.rows().into_iter().enumerate() {
            let q: Vec<f32> = row.to_vec();
            let got = complete.search(store.scorer(metric, &q), &params, &mut scratch);
            let ids: Vec<u32> = got.iter().map(|c| c.id).collect();
            assert_eq!(ids, truth.ids[qi], "greedy vs brute force, query {qi}");
        }

        // Route 2: full pipeline, lossless configuration, exhaustive rerank.
        let index = LeanVecIndex::from_parts(
            ProjectionPair::identity(dim),
            PrimaryStore::from_reduced(data.view(), None).unwrap(),
            SecondaryStore::from_full(data.view(), SecondaryMode::F32 { half: false }).unwrap(),
            complete,
            metric,
            false,
        )
        .unwrap();
        let exhaustive = SearchParams::new(n, n).unwrap();
        for (qi, row) in queries.rows().into_iter().enumerate() {
            let q: Vec<f32> = row.to_vec();
            let got = index.search(&q, 10, &exhaustive).unwrap();
            assert_eq!(got.ids, truth.ids[qi], "pipeline vs brute force, query {qi}");
        }
    }
    println!("criterion 8 PASS: complete-graph search and lossless pipeline match brute force exactly on 200 queries");
}

/// The end-to-end desk instance: n = 10^4 database vectors of intrinsic rank
/// 32 plus 5% noise in D = 128, with out-of-distribution queries drawn from
/// an independent 32-dimensional subspace.
struct DeskInstance {
    data: Array2<f32>,
    train_queries: Array2<f32>,
    test_queries: Array2<f32>,
}

fn desk_instance(seed: u64) -> DeskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim, rank) = (10_000, 128, 32);
    let data_basis = stiefel(&mut rng, rank, dim);
    let query_basis = stiefel(&mut rng, rank, dim);

    let sigma = 0.025; // noise energy = 5%^2 of signal energy
    let mut data = normal_matrix(&mut rng, n, rank).dot(&data_basis);
    let noise = normal_matrix(&mut rng, n, dim);
    data.zip_mut_with(&noise, |d, &g| *d += sigma * g);

    // 2048 training queries so the 4*D = 512 stride subsample is exact.
    let train_queries = normal_matrix(&mut rng, 2048, rank).dot(&query_basis);
    let test_queries = normal_matrix(&mut rng, 200, rank).dot(&query_basis);
    DeskInstance {
        data: to_f32(&data),
        train_queries: to_f32(&train_queries),
        test_queries: to_f32(&test_queries),
    }
}

fn desk_build_params(seed: u64) -> IndexBuildParams {
    IndexBuildParams {
        metric: Metric::InnerProduct,
        normalize_queries: false,
        primary_bits: Some((8, 0)),
        secondary: SecondaryMode::F32 { half: false },
        graph: GraphBuildConfig {
            max_degree: 32,
            build_window: 64,
            prune_alpha: 0.95,
            seed,
            threads: 1,
            ..GraphBuildConfig::default()
        },
    }
}

/// Frank-Wolfe configuration for the end-to-end desk instances: the pair is
/// deployed hull-relaxed, the way the convergence trace in the training
/// criteria suggests; retracting a rank-skewed interior iterate amplifies
/// its weak singular directions and wrecks the approximation.
fn desk_fw_config() -> FwConfig {
    FwConfig {
        retract_output: false,
        ..FwConfig::default()
    }
}

fn desk_recall(index: &LeanVecIndex, inst: &DeskInstance, truth: &leanvec::GroundTruth) -> f64 {
    let params = SearchParams::new(50, 50).unwrap();
    let results = index
        .search_batch(inst.test_queries.view(), 10, &params, 1)
        .unwrap();
    let ids: Vec<Vec<u32>> = results.into_iter().map(|r| r.ids).collect();
    mean_recall(&ids, truth, 10).unwrap()
}

#[test]
fn criterion_09_end_to_end_recall_and_ood_advantage() {
    let mut ood_wins = 0usize;
    for seed in 0..10u64 {
        let inst = desk_instance(500 + seed);
        let truth =
            brute_force_topk(inst.data.view(), inst.test_queries.view(), 10, Metric::InnerProduct)
                .unwrap();
        let params = desk_build_params(900 + seed);

        let id_pair = train_id(accumulate_gram(inst.data.view()).unwrap().view(), 32).unwrap();
        let id_index = build_index(inst.data.view(), id_pair, &params).unwrap();
        let id_recall = desk_recall(&id_index, &inst, &truth);

        let grams = train_grams(inst.train_queries.view(), inst.data.view()).unwrap();
        let (ood_pair, _) = train_ood_fw(&grams, 32, &desk_fw_config()).unwrap();
        let ood_index = build_index(inst.data.view(), ood_pair, &params).unwrap();
        let ood_recall = desk_recall(&ood_index, &inst, &truth);

        assert!(
            ood_recall >= 0.95,
            "seed {seed}: LeanVec-OOD recall {ood_recall} < 0.95"
        );
        assert!(
            ood_recall >= id_recall - 0.005,
            "seed {seed}: OOD recall {ood_recall} below ID recall {id_recall} - 0.005"
        );
        if ood_recall > id_recall {
            ood_wins += 1;
        }
        println!("  seed {seed}: recall id {id_recall:.4}, ood {ood_recall:.4}");
    }
    assert!(ood_wins >= 8, "OOD strictly better on only {ood_wins}/10 seeds");
    println!("criterion 9 PASS: recall@10 >= 0.95 and OOD beats ID strictly on {ood_wins}/10 seeds");
}

#[test]
fn criterion_10_rerank_identity() {
    let inst = desk_instance(550);
    // A smaller slice keeps this about the mechanism, not the build.
    let data = inst.data.slice(ndarray::s![..2000, ..]).to_owned();
    let queries = inst.test_queries.slice(ndarray::s![..100, ..]).to_owned();
    let truth = brute_force_topk(data.view(), queries.view(), 10, Metric::InnerProduct).unwrap();

    let grams = train_grams(inst.train_queries.view(), data.view()).unwrap();
    let (pair, _) = train_ood_es(&grams, 32).unwrap();
    let index = build_index(data.view(), pair, &desk_build_params(31)).unwrap();

    let params = SearchParams::new(50, 50).unwrap();
    let mut scratch = SearchScratch::new();
    for (qi, row) in queries.rows().into_iter().enumerate() {
        let q: Vec<f32> = row.to_vec();
        // Primary candidate list, reproduced through the public pieces.
        let q_matrix = Array2::from_shape_vec((1, q.len()), q.clone()).unwrap();
        let reduced_m = project_rows(index.projection().a(), q_matrix.view());
        let reduced: Vec<f32> = reduced_m.row(0).to_vec();
        let cands = index.graph().search(
            index.primary().scorer(Metric::InnerProduct, &reduced),
            &params,
            &mut scratch,
        );
        let cand_ids: Vec<u32> = cands.iter().map(|c| c.id).collect();

        let reranked = rerank(&cand_ids, &q, index.secondary(), Metric::InnerProduct, 10);
        // The decomposed path is exactly the pipeline path.
        let full = index.search(&q, 10, &params).unwrap();
        assert_eq!(full.ids, reranked.ids);

        let got = recall(&reranked.ids, &truth.ids[qi], 10).unwrap();
        let overlap = truth.ids[qi]
            .iter()
            .filter(|id| cand_ids.contains(id))
            .count();
        let expected = overlap as f64 / 10.0;
        assert_eq!(got, expected, "query {qi}: recall {got} != overlap {expected}");
    }
    println!("criterion 10 PASS: recall@10 after reranking top-50 equals |top-50 ∩ true top-10| / 10 exactly");
}

#[test]
fn criterion_11_graph_construction_robust_to_quantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(560);
    // Gaussian mixture in D=16 (already reduced space).
    let (n, dim) = (2000, 16);
    let centers = normal_matrix(&mut rng, 8, dim) * 3.0;
    let mut reduced = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        let c = centers.row(i % 8);
        for j in 0..dim {
            reduced[(i, j)] = c[j] + rng.sample::<f64, _>(StandardNormal);
        }
    }
    let reduced = to_f32(&reduced);
    let queries = {
        let mut q = Array2::<f64>::zeros((200, dim));
        for i in 0..200 {
            let c = centers.row(i % 8);
            for j in 0..dim {
                q[(i, j)] = c[j] + rng.sample::<f64, _>(StandardNormal);
            }
        }
        to_f32(&q)
    };
    let truth = brute_force_topk(reduced.view(), queries.view(), 10, Metric::Euclidean).unwrap();

    let float_store = PrimaryStore::from_reduced(reduced.view(), None).unwrap();
    let lvq_store = PrimaryStore::from_reduced(reduced.view(), Some((8, 0))).unwrap();
    let config = GraphBuildConfig {
        max_degree: 16,
        build_window: 32,
        prune_alpha: 1.2,
        seed: 77,
        threads: 1,
        ..GraphBuildConfig::default()
    };
    let metric = Metric::Euclidean;
    let graph_float = graph::build(&PrimaryGraphView { store: &float_store, metric }, &config).unwrap();
    let graph_lvq = graph::build(&PrimaryGraphView { store: &lvq_store, metric }, &config).unwrap();

    // Identical float scoring on both graphs isolates the construction.
    let params = SearchParams::new(50, 10).unwrap();
    let mut scratch = SearchScratch::new();
    let mut recall_for = |g: &graph::GraphIndex| -> f64 {
        let mut acc = 0.0;
        for (qi, row) in queries.rows().into_iter().enumerate() {
            let q: Vec<f32> = row.to_vec();
            let got = g.search(float_store.scorer(metric, &q), &params, &mut scratch);
            let ids: Vec<u32> = got.iter().map(|c| c.id).collect();
            acc += recall(&ids, &truth.ids[qi], 10).unwrap();
        }
        acc / queries.nrows() as f64
    };
    let r_float = recall_for(&graph_float);
    let r_lvq = recall_for(&graph_lvq);
    let diff = (r_float - r_lvq).abs();
    assert!(
        diff <= 0.02,
        "recall difference {diff} (float {r_float}, lvq {r_lvq})"
    );
    println!("criterion 11 PASS: graphs built on LVQ8 vs float primaries differ by {diff:.4} <= 0.02 recall");
}

#[test]
fn criterion_12_persistence_roundtrip() {
    let inst = desk_instance(570);
    let data = inst.data.slice(ndarray::s![..2000, ..]).to_owned();
    let queries = inst.test_queries.slice(ndarray::s![..100, ..]).to_owned();

    let grams = train_grams(inst.train_queries.view(), data.view()).unwrap();
    let (pair, _) = train_ood_fw(&grams, 32, &desk_fw_config()).unwrap();
    let mut params = desk_build_params(41);
    params.primary_bits = Some((4, 8));
    let index = build_index(data.view(), pair, &params).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk.lvec");
    save_index(&path, &index).unwrap();
    let loaded = load_index(&path).unwrap();

    let search_params = SearchParams::new(50, 50).unwrap();
    for row in queries.rows() {
        let q: Vec<f32> = row.to_vec();
        let before = index.search(&q, 10, &search_params).unwrap();
        let after = loaded.search(&q, 10, &search_params).unwrap();
        assert_eq!(before.ids, after.ids);
        let bits_b: Vec<u32> = before.scores.iter().map(|s| s.to_bits()).collect();
        let bits_a: Vec<u32> = after.scores.iter().map(|s| s.to_bits()).collect();
        assert_eq!(bits_b, bits_a, "scores not byte-identical");
    }

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 3;
    bytes[mid] ^= 0x04;
    std::fs::write(&path, &bytes).unwrap();
    match load_index(&path) {
        Err(leanvec::Error::ChecksumMismatch { .. }) => {}
        other => panic!("expected checksum failure, got {other:?}"),
    }
    println!("criterion 12 PASS: save/load/search byte-identical on 100 queries; corruption fails the checksum");
}

#[test]
fn criterion_13_query_subsampling_stability() {
    let inst = desk_instance(500); // same construction as criterion 9, seed 0
    let truth =
        brute_force_topk(inst.data.view(), inst.test_queries.view(), 10, Metric::InnerProduct)
            .unwrap();
    let params = desk_build_params(900);

    let full_grams = train_grams(inst.train_queries.view(), inst.data.view()).unwrap();
    let (full_pair, _) = train_ood_fw(&full_grams, 32, &desk_fw_config()).unwrap();
    let full_index = build_index(inst.data.view(), full_pair, &params).unwrap();
    let full_recall = desk_recall(&full_index, &inst, &truth);

    // n_s = 4 * D query subsample via the same stride rule training uses.
    let sub = subsample_rows(inst.train_queries.view(), 4 * 128);
    assert_eq!(sub.nrows(), 512);
    let sub_grams = train_grams(sub.view(), inst.data.view()).unwrap();
    let (sub_pair, _) = train_ood_fw(&sub_grams, 32, &desk_fw_config()).unwrap();
    let sub_index = build_index(inst.data.view(), sub_pair, &params).unwrap();
    let sub_recall = desk_recall(&sub_index, &inst, &truth);

    let diff = (full_recall - sub_recall).abs();
    assert!(
        diff <= 0.01,
        "recall moved by {diff} (full {full_recall}, subsampled {sub_recall})"
    );
    println!("criterion 13 PASS: 4D-query subsampling shifts recall by {diff:.4} <= 0.01");
}









