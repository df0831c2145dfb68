//! Learned linear projections for query/database dimensionality reduction.
//!
//! Three trainers produce a [`ProjectionPair`]:
//!
//! - [`train_id`]: PCA on the database second-moment matrix; query
//!   distribution is ignored and `A = B`.
//! - [`train_ood_fw`]: block-coordinate Frank-Wolfe descent on the
//!   query-aware loss `||Qᵀ Aᵀ B X - Qᵀ X||_F²`, relaxed from orthonormal
//!   rows to the unit spectral-norm ball (whose extreme points the linear
//!   maximization oracle returns). Allows `A != B`.
//! - [`train_ood_es`]: eigenvector search over the blend
//!   `K_β = (1-β)/m K_Q + β/n K_X`, scanning `β` in `[0, 1]` with a
//!   Brent-style scalar minimizer; keeps `A = B`.
//!
//! All losses and gradients run on precomputed Gram matrices, so training
//! cost is independent of the training-set size.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    accumulate_gram, check_psd, spectral_lmo, spectral_norm, stiefel_retract, sym_eig, GramPair,
};

/// Training-set caps enforced by stride subsampling.
pub const MAX_TRAIN_DATABASE: usize = 100_000;
pub const MAX_TRAIN_QUERIES: usize = 10_000;

/// Consecutive sub-tolerance iterations required before the Frank-Wolfe
/// loop stops. A single dip of the relative loss change below `rel_tol` can
/// happen mid-descent while the iterate is still deep inside the hull,
/// where retracting onto the Stiefel manifold is expensive; demanding a
/// sustained plateau stops at iterates whose singular values sit near one.
const TERMINATION_PATIENCE: usize = 5;

/// A pair of `d x D` projection matrices: `a` applies to queries, `b` to
/// database vectors. `orthonormal` distinguishes Stiefel members (rows
/// orthonormal) from hull-relaxed members (spectral norm at most one).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    a: Array2<f64>,
    b: Array2<f64>,
    orthonormal: bool,
}

impl ProjectionPair {
    pub fn new(a: Array2<f64>, b: Array2<f64>, orthonormal: bool) -> Result<Self> {
        if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
            return Err(Error::shape(
                format!("{}x{}", a.nrows(), a.ncols()),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
        let (d, big_d) = (a.nrows(), a.ncols());
        if d == 0 || d > big_d {
            return Err(Error::invalid(format!(
                "projection requires 1 <= d <= D, got d={d}, D={big_d}"
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in projection matrix"));
        }
        for (name, m) in [("a", &a), ("b", &b)] {
            if orthonormal {
                let gram = m.dot(&m.t());
                let mut worst = 0.0f64;
                for i in 0..d {
                    for j in 0..d {
                        let want = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((gram[(i, j)] - want).abs());
                    }
                }
                if worst > 1e-6 {
                    return Err(Error::invalid(format!(
                        "{name} is not row-orthonormal (max |M Mt - I| = {worst:.3e})"
                    )));
                }
            } else {
                let norm = spectral_norm(m.view())?;
                if norm > 1.0 + 1e-6 {
                    return Err(Error::invalid(format!(
                        "{name} lies outside the spectral-norm unit ball (sigma_max = {norm:.6})"
                    )));
                }
            }
        }
        Ok(ProjectionPair { a, b, orthonormal })
    }

    /// Shared-matrix pair (`a = b`), the form produced by PCA and
    /// eigenvector search.
    pub fn shared(p: Array2<f64>, orthonormal: bool) -> Result<Self> {
        let b = p.clone();
        Self::new(p, b, orthonormal)
    }

    /// The lossless `D x D` identity pair.
    pub fn identity(dim: usize) -> Self {
        ProjectionPair {
            a: Array2::eye(dim),
            b: Array2::eye(dim),
            orthonormal: true,
        }
    }

    pub fn reduced_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn source_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }

    pub fn b(&self) -> ArrayView2<'_, f64> {
        self.b.view()
    }

    pub fn orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// True when the query-side and database-side matrices are identical,
    /// as required for Euclidean search.
    pub fn is_shared(&self) -> bool {
        self.a == self.b
    }
}

/// Knobs for the Frank-Wolfe trainer.
#[derive(Debug, Clone, Serialize)]
pub struct FwConfig {
    /// Step-size exponent: `γ = 1 / (t + 1)^alpha`.
    pub alpha: f64,
    /// Iteration cap `T`.
    pub max_iters: usize,
    /// Early-termination threshold on the relative loss change.
    pub rel_tol: f64,
    /// Retract the final hull iterates onto the Stiefel manifold.
    pub retract_output: bool,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            alpha: 0.7,
            max_iters: 500,
            rel_tol: 1e-3,
            retract_output: true,
        }
    }
}

impl FwConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::invalid("rel_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIters,
}

/// Per-iteration trace of a Frank-Wolfe run.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub losses: Vec<f64>,
    pub gaps_a: Vec<f64>,
    pub gaps_b: Vec<f64>,
    pub iterations_run: usize,
    pub termination: Termination,
    pub loss_before_retraction: Option<f64>,
    pub loss_after_retraction: Option<f64>,
}

/// Stride-subsamples `rows` down to at most `max_rows` rows.
pub fn subsample_rows(rows: ArrayView2<f32>, max_rows: usize) -> Array2<f32> {
    let n = rows.nrows();
    if n <= max_rows {
        return rows.to_owned();
    }
    let stride = n.div_ceil(max_rows);
    let picked: Vec<usize> = (0..n).step_by(stride).collect();
    let mut out = Array2::zeros((picked.len(), rows.ncols()));
    for (dst, &src) in picked.iter().enumerate() {
        out.row_mut(dst).assign(&rows.row(src));
    }
    out
}

/// Builds the training Gram pair from raw vectors: stride-subsamples to the
/// training caps, rescales every query to `||q||² = 1/m`, and accumulates
/// both second-moment matrices in 64-bit.
pub fn train_grams(queries: ArrayView2<f32>, database: ArrayView2<f32>) -> Result<GramPair> {
    let dim = database.ncols();
    if queries.ncols() != dim {
        return Err(Error::shape(
            format!("queries of dimension {dim}"),
            format!("{}", queries.ncols()),
        ));
    }
    let db = subsample_rows(database, MAX_TRAIN_DATABASE);
    let mut qs = subsample_rows(queries, MAX_TRAIN_QUERIES);
    let (m, n) = (qs.nrows(), db.nrows());
    if m < dim || n < dim {
        return Err(Error::invalid(format!(
            "training needs at least D = {dim} queries and database vectors, got m = {m}, n = {n}"
        )));
    }
    let target = 1.0 / (m as f64).sqrt();
    for mut row in qs.rows_mut() {
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scale = target / norm;
            row.mapv_inplace(|v| ((v as f64) * scale) as f32);
        }
    }
    let k_q = accumulate_gram(qs.view())?;
    let k_x = accumulate_gram(db.view())?;
    GramPair::new(k_q, k_x, m, n)
}

fn validate_training_dims(grams: &GramPair, d: usize) -> Result<()> {
    let dim = grams.dim();
    if d == 0 || d >= dim {
        return Err(Error::invalid(format!(
            "target dimension must satisfy 1 <= d < D, got d = {d}, D = {dim}"
        )));
    }
    if grams.m < dim || grams.n < dim {
        return Err(Error::invalid(format!(
            "training needs m >= D and n >= D, got m = {}, n = {}, D = {dim}",
            grams.m, grams.n
        )));
    }
    grams.validate_psd()?;
    Ok(())
}

/// Rows of the `d` leading eigenvectors of `k`.
fn leading_eigvec_rows(k: ArrayView2<f64>, d: usize) -> Result<Array2<f64>> {
    let eig = sym_eig(k)?;
    let dim = k.nrows();
    let mut p = Array2::zeros((d, dim));
    for r in 0..d {
        for c in 0..dim {
            p[(r, c)] = eig.vectors[(c, r)];
        }
    }
    Ok(p)
}

/// PCA projection: `A = B = M` with the `d` leading eigenvectors of the
/// database Gram as rows.
pub fn train_id(k_x: ArrayView2<f64>, d: usize) -> Result<ProjectionPair> {
    let dim = k_x.nrows();
    if d == 0 || d >= dim {
        return Err(Error::invalid(format!(
            "target dimension must satisfy 1 <= d < D, got d = {d}, D = {dim}"
        )));
    }
    if !check_psd(k_x, 1e-7) {
        return Err(Error::invalid("k_x is not positive semidefinite within tolerance"));
    }
    ProjectionPair::shared(leading_eigvec_rows(k_x, d)?, true)
}

fn check_pair_grams(pair: &ProjectionPair, grams: &GramPair) -> Result<()> {
    if pair.source_dim() != grams.dim() {
        return Err(Error::shape(
            format!("projection over D = {}", grams.dim()),
            format!("D = {}", pair.source_dim()),
        ));
    }
    Ok(())
}

fn ood_loss_raw(a: &Array2<f64>, b: &Array2<f64>, grams: &GramPair) -> f64 {
    let akq = a.dot(&grams.k_q);
    let bkx = b.dot(&grams.k_x);
    let t1 = (&akq.dot(&a.t()) * &bkx.dot(&b.t())).sum();
    let t2 = (&grams.k_q * &grams.k_x).sum();
    let t3 = (a * &bkx.dot(&grams.k_q)).sum();
    t1 + t2 - 2.0 * t3
}

fn ood_gradients_raw(a: &Array2<f64>, b: &Array2<f64>, grams: &GramPair) -> (Array2<f64>, Array2<f64>) {
    let akq = a.dot(&grams.k_q);
    let bkx = b.dot(&grams.k_x);
    let grad_a = bkx.dot(&b.t()).dot(&akq) * 2.0 - bkx.dot(&grams.k_q) * 2.0;
    let grad_b = akq.dot(&a.t()).dot(&bkx) * 2.0 - akq.dot(&grams.k_x) * 2.0;
    (grad_a, grad_b)
}

fn gap_against(grad: &Array2<f64>, at: &Array2<f64>) -> Result<f64> {
    let neg = grad.mapv(|v| -v);
    let lmo = spectral_lmo(neg.view())?;
    Ok((&neg * &lmo.matrix).sum() - (&neg * at).sum())
}

/// Query-aware loss `tr(A K_Q Aᵀ B K_X Bᵀ + K_Q K_X - 2 K_Q Aᵀ B K_X)`,
/// equal to `||Qᵀ Aᵀ B X - Qᵀ X||_F²` on the vectors behind the Grams.
pub fn ood_loss(pair: &ProjectionPair, grams: &GramPair) -> Result<f64> {
    check_pair_grams(pair, grams)?;
    Ok(ood_loss_raw(&pair.a, &pair.b, grams))
}

/// Partial derivatives of the loss with respect to `a` and `b`.
pub fn ood_gradients(pair: &ProjectionPair, grams: &GramPair) -> Result<(Array2<f64>, Array2<f64>)> {
    check_pair_grams(pair, grams)?;
    Ok(ood_gradients_raw(&pair.a, &pair.b, grams))
}

/// Frank-Wolfe gaps `<-∂f/∂A, S_A - A>` and `<-∂f/∂B, S_B - B>`; zero iff
/// the block is stationary, nonnegative by construction of the oracle.
pub fn fw_gap(pair: &ProjectionPair, grams: &GramPair) -> Result<(f64, f64)> {
    check_pair_grams(pair, grams)?;
    let (ga, gb) = ood_gradients_raw(&pair.a, &pair.b, grams);
    Ok((gap_against(&ga, &pair.a)?, gap_against(&gb, &pair.b)?))
}

/// Frank-Wolfe block-coordinate descent on the relaxed problem.
///
/// Starting from `A = B = 0`, each iteration runs one conditional-gradient
/// update per block with step `γ = 1/(t+1)^alpha`, stopping early once the
/// relative loss change stays at or below `rel_tol` for a few consecutive
/// iterations. Iterates stay inside the hull as convex combinations of its
/// extreme points; the final pair is optionally retracted onto the Stiefel
/// manifold, recording the loss on both sides of the retraction.
pub fn train_ood_fw(
    grams: &GramPair,
    d: usize,
    cfg: &FwConfig,
) -> Result<(ProjectionPair, ConvergenceReport)> {
    cfg.validate()?;
    validate_training_dims(grams, d)?;
    let dim = grams.dim();

    let mut a = Array2::<f64>::zeros((d, dim));
    let mut b = Array2::<f64>::zeros((d, dim));
    let mut losses = Vec::new();
    let mut gaps_a = Vec::new();
    let mut gaps_b = Vec::new();
    let mut prev = ood_loss_raw(&a, &b, grams);
    let mut termination = Termination::MaxIters;
    let mut iterations_run = 0;
    let mut quiet_iters = 0usize;

    for t in 0..cfg.max_iters {
        let gamma = 1.0 / ((t + 1) as f64).powf(cfg.alpha);

        let (grad_a, _) = ood_gradients_raw(&a, &b, grams);
        let neg_a = grad_a.mapv(|v| -v);
        let s_a = spectral_lmo(neg_a.view())?.matrix;
        gaps_a.push((&neg_a * &s_a).sum() - (&neg_a * &a).sum());
        a = &a * (1.0 - gamma) + &s_a * gamma;

        let (_, grad_b) = ood_gradients_raw(&a, &b, grams);
        let neg_b = grad_b.mapv(|v| -v);
        let s_b = spectral_lmo(neg_b.view())?.matrix;
        gaps_b.push((&neg_b * &s_b).sum() - (&neg_b * &b).sum());
        b = &b * (1.0 - gamma) + &s_b * gamma;

        let cur = ood_loss_raw(&a, &b, grams);
        losses.push(cur);
        iterations_run = t + 1;

        let change = (cur - prev).abs();
        let denom = prev.abs();
        let hit = if denom > 0.0 {
            change / denom <= cfg.rel_tol
        } else {
            change == 0.0
        };
        if hit {
            quiet_iters += 1;
            if quiet_iters >= TERMINATION_PATIENCE {
                termination = Termination::Tolerance;
                break;
            }
        } else {
            quiet_iters = 0;
        }
        prev = cur;
    }

    let mut loss_before_retraction = None;
    let mut loss_after_retraction = None;
    if cfg.retract_output {
        loss_before_retraction = Some(ood_loss_raw(&a, &b, grams));
        a = stiefel_retract(a.view())?;
        b = stiefel_retract(b.view())?;
        loss_after_retraction = Some(ood_loss_raw(&a, &b, grams));
    }

    let pair = ProjectionPair::new(a, b, cfg.retract_output)?;
    let report = ConvergenceReport {
        losses,
        gaps_a,
        gaps_b,
        iterations_run,
        termination,
        loss_before_retraction,
        loss_after_retraction,
    };
    Ok((pair, report))
}

/// Eigenvector-search trainer: picks `β` in `[0, 1]` minimizing the loss of
/// the projection built from the `d` leading eigenvectors of
/// `K_β = (1-β)/m K_Q + β/n K_X`.
///
/// The scalar search is a Brent-style minimizer with absolute tolerance
/// `1e-3` in `β`, always backed by explicit evaluations at `β` in
/// `{0, 0.5, 1}` so endpoint minima are never missed; `β = 1` recovers the
/// PCA projection, which pins the loss at or below the PCA loss.
pub fn train_ood_es(grams: &GramPair, d: usize) -> Result<(ProjectionPair, f64)> {
    validate_training_dims(grams, d)?;
    let dim = grams.dim();

    let k_beta = |beta: f64| -> Array2<f64> {
        let wq = (1.0 - beta) / grams.m as f64;
        let wx = beta / grams.n as f64;
        let mut k = Array2::<f64>::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                k[(i, j)] = wq * grams.k_q[(i, j)] + wx * grams.k_x[(i, j)];
            }
        }
        k
    };
    // K_beta stays symmetric and finite by construction, so the
    // eigendecomposition inside the line search cannot fail.
    let objective = |beta: f64| -> f64 {
        let p = leading_eigvec_rows(k_beta(beta).view(), d).expect("k_beta eigendecomposition");
        ood_loss_raw(&p, &p, grams)
    };

    let mut best_beta = 0.0;
    let mut best_loss = f64::INFINITY;
    for beta in [0.0, 0.5, 1.0] {
        let loss = objective(beta);
        if loss < best_loss {
            best_loss = loss;
            best_beta = beta;
        }
    }
    let (brent_beta, brent_loss) = brent_min(objective, 0.0, 1.0, 1e-3, 100);
    if brent_loss < best_loss {
        best_beta = brent_beta;
    }

    let p = leading_eigvec_rows(k_beta(best_beta).view(), d)?;
    Ok((ProjectionPair::shared(p, true)?, best_beta))
}

/// Derivative-free scalar minimization on `[a, b]` via golden-section steps
/// with parabolic interpolation where safe (Brent's `localmin`).
fn brent_min(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let golden = 0.5 * (3.0 - 5.0f64.sqrt());
    let (mut a, mut b) = (a, b);
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d = 0.0f64;
    let mut e = 0.0f64;

    for _ in 0..max_iter {
        let mid = 0.5 * (a + b);
        let tol1 = tol.max(1e-12 * x.abs());
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut step_golden = true;
        if e.abs() > tol1 {
            // Try a parabola through (x, w, v).
            let r = (x - w) * (fx - fv);
            let q2 = (x - v) * (fx - fw);
            let mut p = (x - v) * q2 - (x - w) * r;
            let mut q = 2.0 * (q2 - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                step_golden = false;
            }
        }
        if step_golden {
            e = if x < mid { b - x } else { a - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}
