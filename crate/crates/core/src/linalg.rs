//! Dense helpers on top of `faer`: thresholded symmetric pseudo-inverses,
//! jittered Cholesky, numeric rank and deterministic eigenpair ordering.

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Standard numerical-rank threshold `max(rows, cols) * eps * s_max`.
pub fn rank_tolerance(rows: usize, cols: usize, s_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * s_max
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: MatRef<'_, f64>) -> Mat<f64> {
    assert_eq!(a.nrows(), a.ncols());
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending order.
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<SymEigen> {
    let a = symmetrize(a);
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::numerical(format!("symmetric eigensolver failed: {e:?}")))?;
    let n = a.nrows();
    let s = evd.S();
    let u = evd.U();
    // faer returns ascending order
    let values: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok(SymEigen { values, vectors })
}

/// Applies `f` to the eigenvalues of a symmetric matrix that exceed the rank
/// tolerance, and zero to the rest.
fn sym_spectral_map(a: MatRef<'_, f64>, f: impl Fn(f64) -> f64) -> Result<Mat<f64>> {
    let n = a.nrows();
    let eig = sym_eigen(a)?;
    let s_max = eig.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tol = rank_tolerance(n, n, s_max);
    let kept: Vec<(usize, f64)> = eig
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > tol)
        .map(|(i, v)| (i, f(*v)))
        .collect();
    let q = &eig.vectors;
    let mut scaled = Mat::<f64>::zeros(n, kept.len());
    let mut basis = Mat::<f64>::zeros(n, kept.len());
    for (c, &(i, fv)) in kept.iter().enumerate() {
        for r in 0..n {
            basis[(r, c)] = q[(r, i)];
            scaled[(r, c)] = q[(r, i)] * fv;
        }
    }
    Ok(symmetrize((&scaled * basis.transpose()).as_ref()))
}

/// Pseudo-inverse of a symmetric positive semi-definite matrix, dropping
/// eigenvalues below the rank tolerance.
pub fn psd_pinv(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    sym_spectral_map(a, |v| 1.0 / v)
}

/// `A^{†/2}` for a symmetric positive semi-definite matrix.
pub fn psd_pinv_sqrt(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    sym_spectral_map(a, |v| 1.0 / v.sqrt())
}

/// `A^{1/2}` for a symmetric positive semi-definite matrix.
pub fn psd_sqrt(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    sym_spectral_map(a, f64::sqrt)
}

/// Lower Cholesky factor of a symmetric PSD matrix. When the plain
/// factorization fails a diagonal jitter of `1e-12 * trace / n` is added and
/// raised tenfold until it succeeds.
pub struct JitteredCholesky {
    pub factor: Mat<f64>,
    pub jitter: f64,
}

pub fn cholesky_jittered(a: MatRef<'_, f64>) -> Result<JitteredCholesky> {
    let n = a.nrows();
    let sym = symmetrize(a);
    if let Ok(llt) = sym.llt(Side::Lower) {
        return Ok(JitteredCholesky { factor: llt.L().to_owned(), jitter: 0.0 });
    }
    let trace: f64 = (0..n).map(|i| sym[(i, i)]).sum();
    if !(trace > 0.0) {
        return Err(Error::Degenerate("matrix has non-positive trace".into()));
    }
    let mut jitter = 1e-12 * trace / n as f64;
    for _ in 0..12 {
        let mut shifted = sym.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Ok(llt) = shifted.llt(Side::Lower) {
            return Ok(JitteredCholesky { factor: llt.L().to_owned(), jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::numerical("Cholesky factorization failed even with jitter"))
}

/// `L⁻¹ B` for lower-triangular `L`.
pub fn solve_lower(l: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut x = b.to_owned();
    l.solve_lower_triangular_in_place(&mut x);
    x
}

/// `L⁻ᵀ B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut x = b.to_owned();
    l.transpose().solve_upper_triangular_in_place(&mut x);
    x
}

/// Singular values in nonincreasing order.
pub fn singular_values(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values()
        .map_err(|e| Error::numerical(format!("SVD failed: {e:?}")))
}

/// Number of singular values above `rel_tol * s_max`.
pub fn numeric_rank(a: MatRef<'_, f64>, rel_tol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let Some(&s_max) = s.first() else { return Ok(0) };
    if s_max == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > rel_tol * s_max).count())
}

/// Flips the sign of each column so that its largest-magnitude entry (first
/// one on ties) is positive.
pub fn fix_column_signs(v: &mut Mat<f64>) {
    for j in 0..v.ncols() {
        let mut best = 0;
        for i in 1..v.nrows() {
            if v[(i, j)].abs() > v[(best, j)].abs() {
                best = i;
            }
        }
        if v[(best, j)] < 0.0 {
            for i in 0..v.nrows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
}

/// Order of eigenpairs by descending eigenvalue; exact ties are broken by the
/// first differing eigenvector coordinate (larger first).
pub fn descending_order(values: &[f64], vectors: MatRef<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b].total_cmp(&values[a]).then_with(|| {
            for i in 0..vectors.nrows() {
                let ord = vectors[(i, b)].total_cmp(&vectors[(i, a)]);
                if ord.is_ne() {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    idx
}

/// Columns of `a` in the order given by `idx`.
pub fn select_columns(a: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), idx.len(), |i, j| a[(i, idx[j])])
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

pub fn all_finite(a: MatRef<'_, f64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite()))
}
