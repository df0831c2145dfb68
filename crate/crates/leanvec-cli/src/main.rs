//! Command-line driver: train projections, build indices, generate ground
//! truth, search, and benchmark.
//!
//! Exit codes: 0 on success, 1 on validation or usage errors, 2 on i/o and
//! file-format errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use leanvec::graph::{EntryPoint, GraphBuildConfig, SearchParams};
use leanvec::linalg::accumulate_gram;
use leanvec::projection::{
    ood_loss, subsample_rows, train_grams, train_id, train_ood_es, train_ood_fw, ConvergenceReport,
    FwConfig, ProjectionPair, MAX_TRAIN_DATABASE,
};
use leanvec::storage::{
    load_index, load_projection, read_fvecs, read_ivecs, save_index, save_projection, write_ivecs,
};
use leanvec::{
    bench, brute_force_topk, build_index, BenchOptions, Error, GroundTruth, IndexBuildParams,
    Metric, Result, SecondaryMode, SweepPoint,
};

#[derive(Parser)]
#[command(
    name = "leanvec",
    version,
    about = "Similarity search over high-dimensional vectors with learned dimensionality reduction and per-vector quantization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a projection pair from database (and optionally query) vectors
    Train(TrainArgs),
    /// Build a searchable index bundle from a dataset
    Build(BuildArgs),
    /// Run queries against an index bundle and emit result CSV
    Search(SearchArgs),
    /// Compute exact nearest neighbors by brute force and emit ivecs
    GroundTruth(GroundTruthArgs),
    /// Sweep search parameters against ground truth and emit recall/QPS CSV
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    /// Maximum inner product
    Ip,
    /// Euclidean distance
    L2,
    /// Cosine similarity (vectors are normalized at ingestion)
    Cosine,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// PCA on the database vectors only
    Id,
    /// Query-aware Frank-Wolfe optimization (A and B may differ)
    OodFw,
    /// Query-aware eigenvector search over the blended Gram (A = B)
    OodEs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SecondaryArg {
    /// Uncompressed 32-bit secondary vectors
    F32,
    /// LVQ8-compressed secondary vectors
    Lvq8,
}

#[derive(Args)]
struct TrainArgs {
    /// Database vectors (fvecs)
    #[arg(long)]
    data: PathBuf,
    /// Training query vectors (fvecs); required for the ood-* modes
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Projection trainer
    #[arg(long, value_enum, default_value = "id")]
    mode: ModeArg,
    /// Similarity metric
    #[arg(long, value_enum, default_value = "ip")]
    metric: MetricArg,
    /// Target dimensionality d
    #[arg(long)]
    dim: usize,
    /// Output projection file
    #[arg(long)]
    out: PathBuf,
    /// Training report JSON path [default: <out>.report.json]
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Database vectors (fvecs)
    #[arg(long)]
    data: PathBuf,
    /// Training query vectors (fvecs); required for the ood-* modes
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Reuse a projection file from `train` instead of training inline
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Projection trainer for inline training
    #[arg(long, value_enum, default_value = "id")]
    mode: ModeArg,
    /// Similarity metric
    #[arg(long, value_enum, default_value = "ip")]
    metric: MetricArg,
    /// Target dimensionality d (ignored when --projection is given)
    #[arg(long)]
    dim: Option<usize>,
    /// First-level quantization bits for primary vectors
    #[arg(long, value_parser = ["4", "8"], default_value = "8")]
    b1: String,
    /// Second-level quantization bits for primary vectors (0 = one level)
    #[arg(long, value_parser = ["0", "8"], default_value = "0")]
    b2: String,
    /// Secondary vector storage
    #[arg(long, value_enum, default_value = "f32")]
    secondary: SecondaryArg,
    /// Maximum graph out-degree R
    #[arg(long, default_value_t = 128)]
    graph_degree: usize,
    /// Construction search window L
    #[arg(long, default_value_t = 200)]
    build_window: usize,
    /// Pruning factor [default: 1.2 for l2, 0.95 for ip/cosine]
    #[arg(long)]
    prune_alpha: Option<f32>,
    /// Seed for the construction order
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores, 1 = deterministic build)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output index bundle (.lvec)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Index bundle (.lvec)
    #[arg(long)]
    index: PathBuf,
    /// Query vectors to answer (fvecs)
    #[arg(long)]
    test_queries: PathBuf,
    /// Neighbors returned per query
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Graph search window W
    #[arg(long, default_value_t = 100)]
    search_window: usize,
    /// Candidates re-ranked with secondary vectors
    #[arg(long, default_value_t = 50)]
    rerank: usize,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Result CSV path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GroundTruthArgs {
    /// Database vectors (fvecs)
    #[arg(long)]
    data: PathBuf,
    /// Query vectors (fvecs)
    #[arg(long)]
    queries: PathBuf,
    /// Similarity metric
    #[arg(long, value_enum, default_value = "ip")]
    metric: MetricArg,
    /// Neighbors per query
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output ground-truth file (ivecs)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Index bundle (.lvec)
    #[arg(long)]
    index: PathBuf,
    /// Test query vectors (fvecs)
    #[arg(long)]
    test_queries: PathBuf,
    /// Ground-truth ids (ivecs) for the same queries
    #[arg(long)]
    truth: PathBuf,
    /// Recall depth k
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Comma-separated search windows to sweep
    #[arg(long, default_value = "100", value_delimiter = ',')]
    search_window: Vec<usize>,
    /// Comma-separated rerank depths to sweep
    #[arg(long, default_value = "50", value_delimiter = ',')]
    rerank: Vec<usize>,
    /// Runs per configuration; the fastest sets the reported QPS
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// CSV output path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes, not usage errors.
            if matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Build(args) => run_build(args),
        Command::Search(args) => run_search(args),
        Command::GroundTruth(args) => run_ground_truth(args),
        Command::Bench(args) => run_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_io() { 2 } else { 1 })
        }
    }
}

/// Internal metric plus whether vectors get normalized at ingestion.
fn resolve_metric(arg: MetricArg) -> (Metric, bool) {
    match arg {
        MetricArg::Ip => (Metric::InnerProduct, false),
        MetricArg::L2 => (Metric::Euclidean, false),
        MetricArg::Cosine => (Metric::InnerProduct, true),
    }
}

fn normalize_rows(data: &mut Array2<f32>) {
    for mut row in data.rows_mut() {
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| ((v as f64) / norm) as f32);
        }
    }
}

fn read_vectors(path: &Path, normalize: bool) -> Result<Array2<f32>> {
    let mut data = read_fvecs(path)?;
    if normalize {
        normalize_rows(&mut data);
    }
    Ok(data)
}

fn with_pool<T>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T>
where
    T: Send,
{
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    mode: &'static str,
    metric: &'static str,
    source_dim: usize,
    reduced_dim: usize,
    orthonormal: bool,
    /// Query-aware loss for the ood modes; PCA reconstruction loss for id.
    loss: f64,
    beta: Option<f64>,
    convergence: Option<&'a ConvergenceReport>,
}

fn mode_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Id => "id",
        ModeArg::OodFw => "ood-fw",
        ModeArg::OodEs => "ood-es",
    }
}

fn metric_name(metric: MetricArg) -> &'static str {
    match metric {
        MetricArg::Ip => "ip",
        MetricArg::L2 => "l2",
        MetricArg::Cosine => "cosine",
    }
}

fn validate_mode(mode: ModeArg, metric: MetricArg, queries: &Option<PathBuf>) -> Result<()> {
    if mode != ModeArg::Id && queries.is_none() {
        return Err(Error::InvalidInput(format!(
            "--mode {} requires --queries with a training query set",
            mode_name(mode)
        )));
    }
    if metric == MetricArg::L2 && mode == ModeArg::OodFw {
        return Err(Error::InvalidInput(
            "euclidean search requires a shared projection (a = b), but ood-fw \
             trains separate query/database matrices; use --mode id or ood-es"
                .into(),
        ));
    }
    Ok(())
}

/// Trains a projection pair, returning the loss and mode-specific extras.
fn train_pair(
    data: ArrayView2<f32>,
    queries: Option<ArrayView2<f32>>,
    mode: ModeArg,
    dim: usize,
) -> Result<(ProjectionPair, f64, Option<f64>, Option<ConvergenceReport>)> {
    match mode {
        ModeArg::Id => {
            let sample = subsample_rows(data, MAX_TRAIN_DATABASE);
            let k_x = accumulate_gram(sample.view())?;
            let pair = train_id(k_x.view(), dim)?;
            let m = pair.a();
            let trace: f64 = (0..k_x.nrows()).map(|i| k_x[(i, i)]).sum();
            let kept = m.dot(&k_x).dot(&m.t());
            let loss = trace - (0..dim).map(|i| kept[(i, i)]).sum::<f64>();
            Ok((pair, loss, None, None))
        }
        ModeArg::OodFw => {
            let queries = queries.expect("validated");
            let grams = train_grams(queries, data)?;
            // Deploy the hull-relaxed pair: retracting an interior iterate
            // amplifies its weak singular directions, which on low-rank data
            // costs far more accuracy than the relaxation itself.
            let cfg = FwConfig {
                retract_output: false,
                ..FwConfig::default()
            };
            let (pair, report) = train_ood_fw(&grams, dim, &cfg)?;
            let loss = ood_loss(&pair, &grams)?;
            Ok((pair, loss, None, Some(report)))
        }
        ModeArg::OodEs => {
            let queries = queries.expect("validated");
            let grams = train_grams(queries, data)?;
            let (pair, beta) = train_ood_es(&grams, dim)?;
            let loss = ood_loss(&pair, &grams)?;
            Ok((pair, loss, Some(beta), None))
        }
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    validate_mode(args.mode, args.metric, &args.queries)?;
    let (_, normalize) = resolve_metric(args.metric);
    let data = read_vectors(&args.data, normalize)?;
    let queries = match &args.queries {
        Some(path) => Some(read_vectors(path, normalize)?),
        None => None,
    };
    let (pair, loss, beta, convergence) =
        train_pair(data.view(), queries.as_ref().map(|q| q.view()), args.mode, args.dim)?;
    save_projection(&args.out, &pair)?;

    let report = TrainReport {
        mode: mode_name(args.mode),
        metric: metric_name(args.metric),
        source_dim: pair.source_dim(),
        reduced_dim: pair.reduced_dim(),
        orthonormal: pair.orthonormal(),
        loss,
        beta,
        convergence: convergence.as_ref(),
    };
    let report_path = args
        .report
        .unwrap_or_else(|| report_path_for(&args.out));
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidInput(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, json)?;
    eprintln!(
        "trained {} projection {}x{} (loss {loss:.6e}) -> {} (report {})",
        report.mode,
        report.reduced_dim,
        report.source_dim,
        args.out.display(),
        report_path.display()
    );
    Ok(())
}

fn report_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    out.with_file_name(name)
}

fn run_build(args: BuildArgs) -> Result<()> {
    let (metric, normalize) = resolve_metric(args.metric);
    let data = read_vectors(&args.data, normalize)?;

    let pair = if let Some(path) = &args.projection {
        load_projection(path)?
    } else {
        let dim = args.dim.ok_or_else(|| {
            Error::InvalidInput("--dim is required when no --projection is supplied".into())
        })?;
        validate_mode(args.mode, args.metric, &args.queries)?;
        let queries = match &args.queries {
            Some(path) => Some(read_vectors(path, normalize)?),
            None => None,
        };
        let (pair, _, _, _) =
            train_pair(data.view(), queries.as_ref().map(|q| q.view()), args.mode, dim)?;
        pair
    };

    let b1: u8 = args.b1.parse().expect("restricted by clap");
    let b2: u8 = args.b2.parse().expect("restricted by clap");
    let prune_alpha = args.prune_alpha.unwrap_or(match metric {
        Metric::Euclidean => 1.2,
        Metric::InnerProduct => 0.95,
    });
    let params = IndexBuildParams {
        metric,
        normalize_queries: normalize,
        primary_bits: Some((b1, b2)),
        secondary: match args.secondary {
            SecondaryArg::F32 => SecondaryMode::F32 { half: false },
            SecondaryArg::Lvq8 => SecondaryMode::Lvq8,
        },
        graph: GraphBuildConfig {
            max_degree: args.graph_degree,
            build_window: args.build_window,
            prune_alpha,
            entry_point: EntryPoint::Medoid,
            seed: args.seed,
            threads: if args.threads == 0 {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            } else {
                args.threads
            },
        },
    };
    let index = build_index(data.view(), pair, &params)?;
    save_index(&args.out, &index)?;
    eprintln!(
        "built index over {} vectors (D={}, d={}, R={}, L={}) -> {}",
        index.len(),
        index.projection().source_dim(),
        index.projection().reduced_dim(),
        args.graph_degree,
        args.build_window,
        args.out.display()
    );
    Ok(())
}

fn run_search(args: SearchArgs) -> Result<()> {
    let index = load_index(&args.index)?;
    let queries = read_fvecs(&args.test_queries)?;
    let params = SearchParams::new(args.search_window, args.rerank)?;
    let results = index.search_batch(queries.view(), args.k, &params, args.threads)?;

    let mut csv = String::from("query,rank,id,score\n");
    for (qi, result) in results.iter().enumerate() {
        for (rank, (&id, &score)) in result.ids.iter().zip(result.scores.iter()).enumerate() {
            csv.push_str(&format!("{qi},{rank},{id},{score}\n"));
        }
    }
    emit(&csv, args.out.as_deref())?;
    Ok(())
}

fn run_ground_truth(args: GroundTruthArgs) -> Result<()> {
    let (metric, normalize) = resolve_metric(args.metric);
    let data = read_vectors(&args.data, normalize)?;
    let queries = read_vectors(&args.queries, normalize)?;
    let truth = with_pool(args.threads, || {
        brute_force_topk(data.view(), queries.view(), args.k, metric)
    })??;
    let mut ids = Array2::<i32>::zeros((truth.ids.len(), args.k));
    for (qi, row) in truth.ids.iter().enumerate() {
        for (j, &id) in row.iter().enumerate() {
            ids[(qi, j)] = id as i32;
        }
    }
    write_ivecs(&args.out, ids.view())?;
    eprintln!(
        "ground truth for {} queries at k={} -> {}",
        truth.ids.len(),
        args.k,
        args.out.display()
    );
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let index = load_index(&args.index)?;
    let queries = read_fvecs(&args.test_queries)?;
    let truth_ids = read_ivecs(&args.truth)?;
    if truth_ids.iter().any(|&id| id < 0) {
        return Err(Error::InvalidInput("ground truth contains negative ids".into()));
    }
    let truth = GroundTruth {
        metric: index.metric(),
        k: truth_ids.ncols(),
        ids: truth_ids
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| v as u32).collect())
            .collect(),
    };

    let mut sweep = Vec::new();
    for &window in &args.search_window {
        for &candidates_out in &args.rerank {
            if candidates_out <= window && candidates_out >= args.k {
                sweep.push(SweepPoint {
                    window,
                    candidates_out,
                });
            } else {
                eprintln!("skipping infeasible sweep point W={window}, rerank={candidates_out}");
            }
        }
    }
    let report = bench(
        &index,
        queries.view(),
        &truth,
        &sweep,
        &BenchOptions {
            k: args.k,
            runs: args.runs,
            threads: args.threads,
        },
    )?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    emit(std::str::from_utf8(&buf).expect("csv is utf-8"), args.out.as_deref())?;
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)?;
            file.write_all(text.as_bytes())?;
            file.sync_all()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
