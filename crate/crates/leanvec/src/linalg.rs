//! Dense linear-algebra kernels used by projection training.
//!
//! Everything here works on small `D x D` (or `d x D`) matrices in f64, with
//! `D` up to ~1024. The eigensolver is a cyclic Jacobi iteration and the thin
//! SVD is computed through the d x d Gram matrix; both favor unconditional
//! accuracy and determinism over speed, which is the right trade at these
//! sizes.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
const SV_RANK_TOL: f64 = 1e-10;

/// Rows per accumulation chunk. Fixed so the reduction tree, and therefore
/// the floating-point summation order, never depends on thread count.
const GRAM_CHUNK: usize = 256;

/// Second-order statistics of a training set: `k_q = Q Qᵀ` over query vectors
/// and `k_x = X Xᵀ` over database vectors, with the sample counts they were
/// accumulated from.
#[derive(Debug, Clone)]
pub struct GramPair {
    pub k_q: Array2<f64>,
    pub k_x: Array2<f64>,
    /// Number of query vectors accumulated into `k_q`.
    pub m: usize,
    /// Number of database vectors accumulated into `k_x`.
    pub n: usize,
}

impl GramPair {
    /// Wraps two accumulated Gram matrices, validating symmetry and finiteness.
    pub fn new(k_q: Array2<f64>, k_x: Array2<f64>, m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid("gram pair requires m >= 1 and n >= 1"));
        }
        check_symmetric(&k_q.view(), 1e-9, "k_q")?;
        check_symmetric(&k_x.view(), 1e-9, "k_x")?;
        if k_q.nrows() != k_x.nrows() {
            return Err(Error::shape(
                format!("{0}x{0}", k_q.nrows()),
                format!("{0}x{0}", k_x.nrows()),
            ));
        }
        Ok(GramPair { k_q, k_x, m, n })
    }

    pub fn dim(&self) -> usize {
        self.k_q.nrows()
    }

    /// Checks that both matrices are positive semidefinite up to round-off
    /// (smallest eigenvalue >= -1e-7 * largest). Implemented as a Cholesky
    /// factorization of `K + shift*I`; the shift uses the infinity norm as an
    /// upper bound for the largest eigenvalue, so the test is sound but
    /// slightly lenient.
    pub fn validate_psd(&self) -> Result<()> {
        for (name, k) in [("k_q", &self.k_q), ("k_x", &self.k_x)] {
            if !check_psd(k.view(), 1e-7) {
                return Err(Error::invalid(format!(
                    "{name} is not positive semidefinite within tolerance"
                )));
            }
        }
        Ok(())
    }
}

/// Eigendecomposition of a symmetric matrix: `vectors * diag(values) * vectorsᵀ`
/// reconstructs the input. Column `j` of `vectors` pairs with `values[j]`;
/// eigenvalues are sorted descending.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Thin SVD of a wide `d x D` matrix: `u * diag(s) * vᵀ` reconstructs the
/// input, with `u` a `d x d` orthogonal matrix, `s` nonnegative descending,
/// and `v` a `D x d` matrix with orthonormal columns.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub s: Vec<f64>,
    pub v: Array2<f64>,
}

/// Output of the spectral-norm linear maximization oracle.
#[derive(Debug, Clone)]
pub struct LmoResult {
    /// A row-orthonormal matrix maximizing `<S, C>` over the unit spectral ball.
    pub matrix: Array2<f64>,
    /// True when the input was identically zero and the result is an
    /// arbitrary fixed extreme point (the truncated identity).
    pub degenerate: bool,
}

/// Accumulates the unnormalized Gram matrix `Σᵢ xᵢ xᵢᵀ` over the rows of
/// `vectors`, in 64-bit arithmetic regardless of the 32-bit input.
///
/// Rows are processed in fixed-size chunks merged through a binary reduction
/// tree keyed on chunk index, so repeated runs produce bit-identical output.
pub fn accumulate_gram(vectors: ArrayView2<f32>) -> Result<Array2<f64>> {
    if vectors.nrows() == 0 {
        return Err(Error::invalid("gram accumulation needs at least one vector"));
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite component in gram input"));
    }
    let dim = vectors.ncols();

    // Binary-counter merge: stack entry at level L holds the sum of 2^L
    // chunks. Keeps memory at O(log chunks) matrices while fixing the
    // reduction order.
    let mut stack: Vec<(u32, Array2<f64>)> = Vec::new();
    for chunk in vectors.axis_chunks_iter(ndarray::Axis(0), GRAM_CHUNK) {
        let mut g = Array2::<f64>::zeros((dim, dim));
        for row in chunk.rows() {
            for i in 0..dim {
                let xi = row[i] as f64;
                if xi == 0.0 {
                    continue;
                }
                for j in i..dim {
                    g[(i, j)] += xi * row[j] as f64;
                }
            }
        }
        let mut level = 0u32;
        while let Some((top_level, top)) = stack.pop() {
            if top_level == level {
                g += &top;
                level += 1;
            } else {
                stack.push((top_level, top));
                break;
            }
        }
        stack.push((level, g));
    }
    let mut acc = Array2::<f64>::zeros((dim, dim));
    // Remaining partial sums merge shallow-to-deep; order is still fixed.
    for (_, g) in stack.into_iter().rev() {
        acc += &g;
    }
    // Mirror the upper triangle so the result is exactly symmetric.
    for i in 0..dim {
        for j in (i + 1)..dim {
            acc[(j, i)] = acc[(i, j)];
        }
    }
    Ok(acc)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input must be symmetric to within `1e-8 * max|K|`; it is exactly
/// symmetrized before iterating. Eigenvalues come out sorted descending with
/// matching eigenvector columns.
pub fn sym_eig(k: ArrayView2<f64>) -> Result<EigenResult> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(Error::shape(
            "square matrix with D >= 1",
            format!("{}x{}", k.nrows(), k.ncols()),
        ));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite component in eigensolver input"));
    }
    check_symmetric(&k, 1e-8, "eigensolver input")?;

    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = 0.5 * (k[(i, j)] + k[(j, i)]);
        }
    }
    let mut v = Array2::<f64>::eye(n);

    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale > 0.0 {
        let tol = scale * 1e-15;
        // Quadratic convergence; 64 sweeps is far beyond what D <= 1024 needs.
        for _sweep in 0..64 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(a[(p, q)].abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= tol * 1e-2 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    rotate(&mut a, &mut v, p, q, c, s);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap().then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(EigenResult { values, vectors })
}

/// One Jacobi rotation in the (p, q) plane applied to `a` and accumulated
/// into `v`.
fn rotate(a: &mut Array2<f64>, v: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let apq = a[(p, q)];
    a[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    a[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for i in 0..n {
        if i != p && i != q {
            let aip = a[(i, p)];
            let aiq = a[(i, q)];
            a[(i, p)] = c * aip - s * aiq;
            a[(p, i)] = a[(i, p)];
            a[(i, q)] = s * aip + c * aiq;
            a[(q, i)] = a[(i, q)];
        }
    }
    for i in 0..n {
        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = c * vip - s * viq;
        v[(i, q)] = s * vip + c * viq;
    }
}

/// Thin SVD of a wide matrix via the eigendecomposition of `C Cᵀ`.
///
/// Singular directions with `σ <= 1e-10 * σ_max` get their right singular
/// vectors completed by Gram-Schmidt against the columns already produced,
/// so `v` always has `d` orthonormal columns.
pub fn thin_svd(c: ArrayView2<f64>) -> Result<ThinSvd> {
    let (d, big_d) = (c.nrows(), c.ncols());
    if d == 0 || big_d == 0 {
        return Err(Error::shape("non-empty matrix", format!("{d}x{big_d}")));
    }
    if d > big_d {
        return Err(Error::invalid(format!(
            "thin_svd expects d <= D, got {d}x{big_d}"
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite component in svd input"));
    }

    let mut gram = c.dot(&c.t());
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            gram[(i, j)] = avg;
            gram[(j, i)] = avg;
        }
    }
    let eig = sym_eig(gram.view())?;
    let s: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let s_max = s[0];
    let u = eig.vectors;

    let ct = c.t();
    let mut v = Array2::<f64>::zeros((big_d, d));
    let mut filled = vec![false; d];
    for i in 0..d {
        if s[i] > SV_RANK_TOL * s_max && s_max > 0.0 {
            let ui = u.column(i);
            let col = ct.dot(&ui);
            for r in 0..big_d {
                v[(r, i)] = col[r] / s[i];
            }
            filled[i] = true;
        }
    }
    // Re-orthonormalize in order: tiny singular values lose digits in the
    // division above, and completion columns must be built against clean
    // predecessors.
    for i in 0..d {
        if filled[i] {
            let ok = orthonormalize_column(&mut v, i, 0.5);
            filled[i] = ok;
        }
    }
    let mut basis_cursor = 0usize;
    for i in 0..d {
        if filled[i] {
            continue;
        }
        loop {
            assert!(basis_cursor < big_d, "cannot complete orthonormal set");
            for r in 0..big_d {
                v[(r, i)] = if r == basis_cursor { 1.0 } else { 0.0 };
            }
            basis_cursor += 1;
            if orthonormalize_column(&mut v, i, 0.5) {
                break;
            }
        }
    }
    Ok(ThinSvd { u, s, v })
}

/// Gram-Schmidt pass (applied twice) of column `idx` against columns `0..idx`.
/// Returns false when the column collapses below `min_norm`.
fn orthonormalize_column(v: &mut Array2<f64>, idx: usize, min_norm: f64) -> bool {
    let rows = v.nrows();
    for _ in 0..2 {
        for prev in 0..idx {
            let mut dot = 0.0;
            for r in 0..rows {
                dot += v[(r, prev)] * v[(r, idx)];
            }
            for r in 0..rows {
                v[(r, idx)] -= dot * v[(r, prev)];
            }
        }
    }
    let norm = (0..rows).map(|r| v[(r, idx)] * v[(r, idx)]).sum::<f64>().sqrt();
    if norm < min_norm {
        return false;
    }
    for r in 0..rows {
        v[(r, idx)] /= norm;
    }
    true
}

/// Linear maximization oracle for `sup <S, C>` over the unit ball of the
/// spectral norm: returns `U Vᵀ` from the thin SVD of `C`, a row-orthonormal
/// extreme point of the ball.
pub fn spectral_lmo(c: ArrayView2<f64>) -> Result<LmoResult> {
    let (d, big_d) = (c.nrows(), c.ncols());
    if c.iter().all(|&x| x == 0.0) {
        if d == 0 || d > big_d {
            return Err(Error::invalid(format!("lmo expects 1 <= d <= D, got {d}x{big_d}")));
        }
        let mut m = Array2::<f64>::zeros((d, big_d));
        for i in 0..d {
            m[(i, i)] = 1.0;
        }
        return Ok(LmoResult {
            matrix: m,
            degenerate: true,
        });
    }
    let svd = thin_svd(c)?;
    Ok(LmoResult {
        matrix: svd.u.dot(&svd.v.t()),
        degenerate: false,
    })
}

/// Polar retraction onto the row-orthonormal matrices: returns `U Vᵀ`, the
/// nearest row-orthonormal matrix to `a` in Frobenius distance.
pub fn stiefel_retract(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let svd = thin_svd(a)?;
    let s_max = svd.s[0];
    let rank = svd
        .s
        .iter()
        .filter(|&&s| s_max > 0.0 && s > SV_RANK_TOL * s_max)
        .count();
    if rank < a.nrows() {
        return Err(Error::RankDeficient {
            rank,
            expected: a.nrows(),
        });
    }
    Ok(svd.u.dot(&svd.v.t()))
}

/// Largest singular value, used for hull-membership checks.
pub fn spectral_norm(a: ArrayView2<f64>) -> Result<f64> {
    Ok(thin_svd(a)?.s[0])
}

fn check_symmetric(k: &ArrayView2<f64>, rel_tol: f64, what: &str) -> Result<()> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::shape("square matrix", format!("{}x{}", n, k.ncols())));
    }
    let scale = k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
        }
    }
    if worst > rel_tol * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(format!(
            "{what} is asymmetric beyond tolerance (max |K - Kt| = {worst:.3e}, max |K| = {scale:.3e})"
        )));
    }
    Ok(())
}

/// Cholesky-based test that `k + rel_tol * bound(λ_max) * I` is positive
/// definite, where the bound is the infinity norm. Sound but slightly
/// lenient, since the infinity norm can exceed the largest eigenvalue.
pub fn check_psd(k: ArrayView2<f64>, rel_tol: f64) -> bool {
    let n = k.nrows();
    let inf_norm = (0..n)
        .map(|i| (0..n).map(|j| k[(i, j)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let shift = rel_tol * inf_norm.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = k[(i, j)] + if i == j { shift } else { 0.0 };
            for p in 0..j {
                sum -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    true
}
