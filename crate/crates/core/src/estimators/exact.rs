//! Exact `n × n` estimators, used as references for the sketched ones.
//!
//! These are written directly from the full-data formulas rather than by
//! calling the Nystrom routines with `m = n`, so that agreement between the two
//! is a genuine check:
//!
//! * KRR: `W = (K_X + nλ I)⁻¹`.
//! * PCR: `W = V_r Λ_r⁻¹ V_rᵀ` from the top `r` eigenpairs of `K_X`.
//! * RRR: with `R = K_Y^{1/2}` and `S = K_X (K_X + nλ I)⁻¹`, take the top `r`
//!   eigenvectors `C_r` of `R S R`; then `U = R† C_r`, `V = (K_X + nλ I)⁻¹ R C_r`.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};

use super::{check_lambda, check_rank, EstimatorKind, FittedEstimator};
use crate::data::LaggedPairs;
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::linalg::{
    descending_order, fix_column_signs, max_abs, rank_tolerance, select_columns, sym_eigen, symmetrize,
};

/// Limits for the exact estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactOptions {
    /// Largest number of pairs accepted.
    pub max_n: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self { max_n: 5000 }
    }
}

fn prepare(pairs: &LaggedPairs, kernel: &KernelSpec, opts: &ExactOptions) -> Result<Mat<f64>> {
    let n = pairs.len();
    if n > opts.max_n {
        return Err(Error::TooLarge { n, limit: opts.max_n });
    }
    let k_x = gram(kernel, pairs.x(), pairs.x())?;
    if max_abs(k_x.as_ref()) == 0.0 {
        return Err(Error::Degenerate("input Gram matrix is zero".into()));
    }
    Ok(k_x)
}

/// Eigenpairs in descending order with deterministic tie-breaking and signs.
fn ordered_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let eig = sym_eigen(a.as_ref())?;
    let order = descending_order(&eig.values, eig.vectors.as_ref());
    let values = order.iter().map(|&i| eig.values[i]).collect();
    let mut vectors = select_columns(eig.vectors.as_ref(), &order);
    fix_column_signs(&mut vectors);
    Ok((values, vectors))
}

fn shifted(a: &Mat<f64>, s: f64) -> Mat<f64> {
    let mut b = a.clone();
    for i in 0..b.nrows() {
        b[(i, i)] += s;
    }
    b
}

fn build(
    kind: EstimatorKind,
    pairs: &LaggedPairs,
    kernel: KernelSpec,
    lambda: f64,
    rank: usize,
    u: Mat<f64>,
    v: Option<Mat<f64>>,
) -> Result<FittedEstimator> {
    FittedEstimator::new(kind, kernel, lambda, rank, pairs.x().to_owned(), pairs.y().to_owned(), u, v)
}

pub fn fit_exact_krr(
    pairs: &LaggedPairs,
    kernel: KernelSpec,
    lambda: f64,
    opts: &ExactOptions,
) -> Result<FittedEstimator> {
    check_lambda(lambda)?;
    let n = pairs.len();
    let k_x = prepare(pairs, &kernel, opts)?;
    let reg = symmetrize(shifted(&k_x, n as f64 * lambda).as_ref());
    let llt = reg
        .llt(Side::Lower)
        .map_err(|e| Error::numerical(format!("K + nλI is not positive definite: {e:?}")))?;
    let w = llt.inverse();
    build(EstimatorKind::ExactKrr, pairs, kernel, lambda, n, w, None)
}

pub fn fit_exact_pcr(
    pairs: &LaggedPairs,
    kernel: KernelSpec,
    r: usize,
    opts: &ExactOptions,
) -> Result<FittedEstimator> {
    let n = pairs.len();
    check_rank(r, n)?;
    let k_x = prepare(pairs, &kernel, opts)?;
    let (mu, vecs) = ordered_eigen(&k_x)?;
    drop(k_x);
    let tol = rank_tolerance(n, n, mu[0].abs());
    let achievable = mu.iter().filter(|&&v| v > tol).count();
    if achievable < r {
        return Err(Error::RankDeficient { requested: r, achievable });
    }
    let idx: Vec<usize> = (0..r).collect();
    let v = select_columns(vecs.as_ref(), &idx);
    drop(vecs);
    let u = Mat::from_fn(n, r, |i, j| v[(i, j)] / mu[j]);
    build(EstimatorKind::ExactPcr, pairs, kernel, 0.0, r, u, Some(v))
}

pub fn fit_exact_rrr(
    pairs: &LaggedPairs,
    kernel: KernelSpec,
    lambda: f64,
    r: usize,
    opts: &ExactOptions,
) -> Result<FittedEstimator> {
    check_lambda(lambda)?;
    let n = pairs.len();
    check_rank(r, n)?;
    let k_x = prepare(pairs, &kernel, opts)?;
    let k_y = gram(&kernel, pairs.y(), pairs.y())?;
    let nl = n as f64 * lambda;

    // S = K_X (K_X + nλ)⁻¹ through the eigenbasis of K_X
    let (mu, q) = ordered_eigen(&k_x)?;
    let f = |v: f64| v.max(0.0) / (v.max(0.0) + nl);
    let s = {
        let qs = Mat::from_fn(n, n, |i, j| q[(i, j)] * f(mu[j]));
        symmetrize((&qs * q.transpose()).as_ref())
    };

    // R = K_Y^{1/2} and R† from one eigendecomposition
    let (ky_vals, ky_vecs) = ordered_eigen(&k_y)?;
    let tol = rank_tolerance(n, n, ky_vals[0].abs());
    let sqrt_v = |v: f64| if v > tol { v.sqrt() } else { 0.0 };
    let inv_sqrt_v = |v: f64| if v > tol { 1.0 / v.sqrt() } else { 0.0 };
    let rs = Mat::from_fn(n, n, |i, j| ky_vecs[(i, j)] * sqrt_v(ky_vals[j]));
    let r_half = symmetrize((&rs * ky_vecs.transpose()).as_ref());
    let rs = Mat::from_fn(n, n, |i, j| ky_vecs[(i, j)] * inv_sqrt_v(ky_vals[j]));
    let r_pinv = symmetrize((&rs * ky_vecs.transpose()).as_ref());

    let rsr = &r_half * &s * &r_half;
    let (vals, vecs) = ordered_eigen(&rsr)?;
    let tol = rank_tolerance(n, n, vals[0].abs());
    let achievable = vals.iter().filter(|&&v| v > tol).count();
    if achievable < r {
        return Err(Error::RankDeficient { requested: r, achievable });
    }
    let idx: Vec<usize> = (0..r).collect();
    let c = select_columns(vecs.as_ref(), &idx);
    let u = &r_pinv * &c;
    // (K_X + nλ)⁻¹ R C_r, again in the eigenbasis of K_X
    let rc = &r_half * &c;
    let qt_rc = q.transpose() * &rc;
    let scaled = Mat::from_fn(n, r, |i, j| qt_rc[(i, j)] / (mu[i].max(0.0) + nl));
    let v = &q * &scaled;
    build(EstimatorKind::ExactRrr, pairs, kernel, lambda, r, u, Some(v))
}
