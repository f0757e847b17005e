//! Spectral post-processing of a fitted estimator.
//!
//! With `Â = Φ_Ỹ U Vᵀ Φ_X̃*`, the non-zero spectrum of `Â` is the spectrum of the
//! `r × r` middle matrix `M = Vᵀ K_X̃Ỹ U`.
//!
//! * Right eigenfunctions: `ψ_i = Φ_Ỹ U g_i` with `M g_i = λ_i g_i`, normalized
//!   so that `‖ψ_i‖ = 1`.
//! * Left eigenfunctions: `ξ_i = Φ_X̃ V h_i / λ̄_i` with `Mᵀ h_i = λ̄_i h_i` and
//!   `h_i* g_j = δ_ij`. These are eigenfunctions of `Â*`, the estimate of the
//!   Koopman operator, with eigenvalue `λ̄_i`.
//! * Modes of an observable `g`: `γ_i = (U g_i)* g_m`, with `g_m` the values of
//!   `g` at the output centers.

use std::cmp::Ordering;
use std::io::Write;

use faer::linalg::solvers::DenseSolveCore;
use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FittedEstimator;
use crate::kernels::{gram, KernelSpec};
use crate::linalg::all_finite;

/// Eigenvalues below this modulus have no normalizable left eigenfunction.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-12;

/// Condition number of the eigenvector matrix above which the middle matrix
/// is reported as (numerically) defective.
pub const DEFECTIVE_COND: f64 = 1e10;

pub(crate) fn to_complex(a: MatRef<'_, f64>) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| c64::new(a[(i, j)], 0.0))
}

/// `A B` for real `A` and complex `B`.
fn real_times_complex(a: MatRef<'_, f64>, b: MatRef<'_, c64>) -> Mat<c64> {
    let re = a * Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)].re);
    let im = a * Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)].im);
    Mat::from_fn(re.nrows(), re.ncols(), |i, j| c64::new(re[(i, j)], im[(i, j)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `ψ_i`, expanded on the output centers.
    Right,
    /// `ξ_i`, expanded on the input centers.
    Left,
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Sorted by descending modulus, conjugate pairs adjacent with the positive
    /// imaginary part first.
    pub eigenvalues: Vec<c64>,
    /// `G`, `r × r`: eigenvectors of the middle matrix.
    pub g: Mat<c64>,
    /// `H = G^{-*}`, `r × r`.
    pub h: Mat<c64>,
    /// `U g_i`, `m × r`: coefficients of `ψ_i` on the output centers.
    pub right_coeffs: Mat<c64>,
    /// `V h_i / λ̄_i`, `m × r`: coefficients of `ξ_i` on the input centers.
    /// Columns of flagged eigenpairs are zero.
    pub left_coeffs: Mat<c64>,
    /// `V h_i` without the `1/λ̄_i` scaling.
    pub left_raw: Mat<c64>,
    /// `|λ_i| < 1e-12`: the left eigenfunction is not normalizable.
    pub flagged: Vec<bool>,
    /// `‖M g_i − λ_i g_i‖` for each eigenpair.
    pub residuals: Vec<f64>,
    /// Condition number of `G`.
    pub eigvec_cond: f64,
    pub defective: bool,
    pub warnings: Vec<String>,
    kernel: KernelSpec,
    x_centers: Mat<f64>,
    y_centers: Mat<f64>,
}

/// Blocks of the sorted spectrum: a real eigenvalue or a conjugate pair.
struct Block {
    first: usize,
    second: Option<usize>,
    modulus: f64,
    re: f64,
    im: f64,
}

fn block_order(a: &Block, b: &Block) -> Ordering {
    b.modulus
        .total_cmp(&a.modulus)
        .then_with(|| a.second.is_some().cmp(&b.second.is_some()))
        .then_with(|| b.re.total_cmp(&a.re))
        .then_with(|| b.im.total_cmp(&a.im))
        .then_with(|| a.first.cmp(&b.first))
}

/// Groups eigenvalues into real singletons and conjugate pairs. Returns the
/// sorted blocks, a possibly rewritten eigenvector matrix where each pair's
/// partner is the exact conjugate, and the snapped eigenvalues.
fn pair_and_sort(values: &[c64], vectors: &mut Mat<c64>) -> (Vec<c64>, Vec<usize>) {
    let r = values.len();
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.norm()));
    let tol = 1e-8 * scale.max(f64::MIN_POSITIVE);
    let mut vals = values.to_vec();
    let mut used = vec![false; r];
    let mut blocks = Vec::new();
    for i in 0..r {
        if used[i] {
            continue;
        }
        used[i] = true;
        if vals[i].im == 0.0 {
            blocks.push(Block { first: i, second: None, modulus: vals[i].norm(), re: vals[i].re, im: 0.0 });
            continue;
        }
        // nearest unused candidate for the conjugate
        let target = vals[i].conj();
        let partner = (0..r)
            .filter(|&j| !used[j] && vals[j].im.signum() == -vals[i].im.signum())
            .min_by(|&a, &b| (vals[a] - target).norm().total_cmp(&(vals[b] - target).norm()));
        match partner {
            Some(j) if (vals[j] - target).norm() <= tol => {
                used[j] = true;
                let (p, q) = if vals[i].im > 0.0 { (i, j) } else { (j, i) };
                vals[q] = vals[p].conj();
                for k in 0..vectors.nrows() {
                    vectors[(k, q)] = vectors[(k, p)].conj();
                }
                blocks.push(Block { first: p, second: Some(q), modulus: vals[p].norm(), re: vals[p].re, im: vals[p].im });
            }
            _ if vals[i].im.abs() <= tol => {
                // unpaired and numerically real
                vals[i] = c64::new(vals[i].re, 0.0);
                for k in 0..vectors.nrows() {
                    vectors[(k, i)] = c64::new(vectors[(k, i)].re, 0.0);
                }
                blocks.push(Block { first: i, second: None, modulus: vals[i].norm(), re: vals[i].re, im: 0.0 });
            }
            _ => {
                blocks.push(Block {
                    first: i,
                    second: None,
                    modulus: vals[i].norm(),
                    re: vals[i].re,
                    im: vals[i].im,
                });
            }
        }
    }
    blocks.sort_by(block_order);
    let order: Vec<usize> = blocks.iter().flat_map(|b| std::iter::once(b.first).chain(b.second)).collect();
    (vals, order)
}

/// Scales `g` so that `g* A g = 1` and its largest-modulus entry (first on
/// ties) is real positive. Returns `false` when `g* A g` is not positive.
fn normalize(g: &mut [c64], a: MatRef<'_, f64>) -> bool {
    let r = g.len();
    let mut quad = 0.0;
    for i in 0..r {
        let mut s = c64::new(0.0, 0.0);
        for j in 0..r {
            s += g[j] * a[(i, j)];
        }
        quad += (g[i].conj() * s).re;
    }
    if !(quad > 0.0 && quad.is_finite()) {
        return false;
    }
    let mut best = 0;
    for i in 1..r {
        if g[i].norm() > g[best].norm() {
            best = i;
        }
    }
    let phase = g[best].conj() / g[best].norm();
    let s = phase / quad.sqrt();
    for x in g.iter_mut() {
        *x *= s;
    }
    g[best] = c64::new(g[best].norm(), 0.0);
    true
}

fn condition_number(a: MatRef<'_, c64>) -> f64 {
    match a.singular_values() {
        Ok(s) if !s.is_empty() => {
            let min = *s.last().unwrap();
            if min > 0.0 {
                s[0] / min
            } else {
                f64::INFINITY
            }
        }
        _ => f64::INFINITY,
    }
}

/// Eigendecomposition of a fitted estimator.
pub fn decompose(est: &FittedEstimator) -> Result<SpectralDecomposition> {
    let kernel = est.kernel;
    let k_xc_yc = gram(&kernel, est.x_centers(), est.y_centers())?;
    let k_yc_yc = gram(&kernel, est.y_centers(), est.y_centers())?;
    let u = est.u();
    let r = est.factor_rank();
    // M = Vᵀ K_X̃Ỹ U
    let middle = est.right_apply_t((&k_xc_yc * u).as_ref());
    let gy = u.transpose() * (&k_yc_yc * u);

    let evd = middle
        .eigen()
        .map_err(|e| Error::numerical(format!("eigensolver failed: {e:?}")))?;
    let raw_vals: Vec<c64> = (0..r).map(|i| evd.S()[i]).collect();
    let mut raw_vecs = evd.U().to_owned();
    let (vals, order) = pair_and_sort(&raw_vals, &mut raw_vecs);

    let mut warnings = Vec::new();
    let eigenvalues: Vec<c64> = order.iter().map(|&i| vals[i]).collect();
    let mut g = Mat::from_fn(r, r, |i, j| raw_vecs[(i, order[j])]);
    let mut j = 0;
    while j < r {
        let mut col: Vec<c64> = (0..r).map(|i| g[(i, j)]).collect();
        if !normalize(&mut col, gy.as_ref()) {
            warnings.push(format!("eigenpair {j}: right eigenfunction has zero norm"));
        }
        for i in 0..r {
            g[(i, j)] = col[i];
        }
        // keep the partner of a conjugate pair an exact conjugate
        if eigenvalues[j].im > 0.0 && j + 1 < r && eigenvalues[j + 1] == eigenvalues[j].conj() {
            for i in 0..r {
                g[(i, j + 1)] = col[i].conj();
            }
            j += 2;
        } else {
            j += 1;
        }
    }

    let mut residuals = Vec::with_capacity(r);
    let mc = to_complex(middle.as_ref());
    let mg = &mc * &g;
    for j in 0..r {
        let res: f64 = (0..r).map(|i| (mg[(i, j)] - eigenvalues[j] * g[(i, j)]).norm_sqr()).sum();
        residuals.push(res.sqrt());
    }
    let eigvec_cond = condition_number(g.as_ref());
    let defective = !(eigvec_cond <= DEFECTIVE_COND);
    if defective {
        let worst = residuals.iter().cloned().fold(0.0, f64::max);
        warnings.push(format!(
            "middle matrix is numerically defective: cond(G) = {eigvec_cond:.3e}, max residual {worst:.3e}"
        ));
    }
    let h = g.partial_piv_lu().inverse().adjoint().to_owned();
    if !all_finite_c(h.as_ref()) {
        return Err(Error::numerical("eigenvector matrix is singular"));
    }

    let right_coeffs = real_times_complex(u, g.as_ref());
    let left_raw = match est.v() {
        Some(v) => real_times_complex(v, h.as_ref()),
        None => h.clone(),
    };
    let flagged: Vec<bool> = eigenvalues.iter().map(|l| l.norm() < ZERO_EIGENVALUE_TOL).collect();
    let m = est.n_centers();
    let left_coeffs = Mat::from_fn(m, r, |i, j| {
        if flagged[j] {
            c64::new(0.0, 0.0)
        } else {
            left_raw[(i, j)] / eigenvalues[j].conj()
        }
    });
    let n_flagged = flagged.iter().filter(|f| **f).count();
    if n_flagged > 0 {
        warnings.push(format!("{n_flagged} eigenvalue(s) below {ZERO_EIGENVALUE_TOL:e} in modulus; left eigenfunctions not normalizable"));
    }
    if let Some(top) = eigenvalues.first() {
        if top.norm() > 1.05 {
            warnings.push(format!("spectral radius {:.4} exceeds 1.05", top.norm()));
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        g,
        h,
        right_coeffs,
        left_coeffs,
        left_raw,
        flagged,
        residuals,
        eigvec_cond,
        defective,
        warnings,
        kernel,
        x_centers: est.x_centers().to_owned(),
        y_centers: est.y_centers().to_owned(),
    })
}

fn all_finite_c(a: MatRef<'_, c64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].re.is_finite() && a[(i, j)].im.is_finite()))
}

fn check_query(x: MatRef<'_, f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.ncols() });
    }
    if !all_finite(x) {
        return Err(Error::input("non-finite query state"));
    }
    Ok(())
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// `⟨ψ_i, ξ̄_j⟩`-type pairing `(V h_i/λ̄_i)* K_X̃Ỹ (U g_j)`, which should be
    /// the identity. Rows of flagged eigenpairs are zero.
    pub fn biorthogonality(&self) -> Result<Mat<c64>> {
        let k = to_complex(gram(&self.kernel, self.x_centers.as_ref(), self.y_centers.as_ref())?.as_ref());
        Ok(self.left_coeffs.adjoint() * (&k * &self.right_coeffs))
    }

    /// `‖ψ_i‖²` for each eigenpair.
    pub fn right_norms(&self) -> Result<Vec<f64>> {
        let k = to_complex(gram(&self.kernel, self.y_centers.as_ref(), self.y_centers.as_ref())?.as_ref());
        let ka = &k * &self.right_coeffs;
        Ok((0..self.len())
            .map(|j| {
                let mut s = c64::new(0.0, 0.0);
                for i in 0..ka.nrows() {
                    s += self.right_coeffs[(i, j)].conj() * ka[(i, j)];
                }
                s.re
            })
            .collect())
    }

    /// Values of the eigenfunctions at the query states, `q × r`.
    pub fn eval_eigenfunctions(&self, x: MatRef<'_, f64>, side: Side) -> Result<Mat<c64>> {
        check_query(x, self.x_centers.ncols())?;
        match side {
            Side::Right => {
                let k = gram(&self.kernel, x, self.y_centers.as_ref())?;
                Ok(real_times_complex(k.as_ref(), self.right_coeffs.as_ref()))
            }
            Side::Left => {
                let k = gram(&self.kernel, x, self.x_centers.as_ref())?;
                Ok(real_times_complex(k.as_ref(), self.left_coeffs.as_ref()))
            }
        }
    }

    /// Left eigenfunctions without the `1/λ̄_i` scaling, `q × r`; finite for
    /// every eigenpair, flagged or not.
    pub fn eval_left_unscaled(&self, x: MatRef<'_, f64>) -> Result<Mat<c64>> {
        check_query(x, self.x_centers.ncols())?;
        let k = gram(&self.kernel, x, self.x_centers.as_ref())?;
        Ok(real_times_complex(k.as_ref(), self.left_raw.as_ref()))
    }
}

/// Free-function form of [`SpectralDecomposition::eval_eigenfunctions`].
pub fn eval_eigenfunctions(dec: &SpectralDecomposition, x: MatRef<'_, f64>, side: Side) -> Result<Mat<c64>> {
    dec.eval_eigenfunctions(x, side)
}

/// `(Â* g)(x) = Σ_j (Wᵀ g_m)_j k(x̃_j, x)` for an observable with values `g_m`
/// (`m × d_g`) at the output centers.
pub fn forecast(est: &FittedEstimator, g_m: MatRef<'_, f64>, x_query: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if g_m.nrows() != est.n_centers() {
        return Err(Error::DimensionMismatch { expected: est.n_centers(), got: g_m.nrows() });
    }
    check_query(x_query, est.dim())?;
    let k_q_xc = gram(&est.kernel, x_query, est.x_centers())?;
    let left = est.right_apply(k_q_xc.as_ref());
    Ok(&left * (est.u().transpose() * g_m))
}

/// Koopman modes of one observable.
#[derive(Debug, Clone)]
pub struct ModeSet {
    /// `r × d_g`; row `i` is `γ_i`.
    pub modes: Mat<c64>,
    /// The observable at the output centers, `m × d_g`.
    pub g_m: Mat<f64>,
}

/// `γ_i = (U g_i)* g_m`.
pub fn modes(dec: &SpectralDecomposition, g_m: MatRef<'_, f64>) -> Result<ModeSet> {
    if g_m.nrows() != dec.right_coeffs.nrows() {
        return Err(Error::DimensionMismatch { expected: dec.right_coeffs.nrows(), got: g_m.nrows() });
    }
    let modes = dec.right_coeffs.adjoint() * to_complex(g_m);
    Ok(ModeSet { modes, g_m: g_m.to_owned() })
}

#[derive(Debug, Clone)]
pub struct KmdForecast {
    pub values: Mat<c64>,
    /// `max |Im| / max |value|` over the output.
    pub imag_residue: f64,
    pub warnings: Vec<String>,
}

impl KmdForecast {
    pub fn real_part(&self) -> Mat<f64> {
        Mat::from_fn(self.values.nrows(), self.values.ncols(), |i, j| self.values[(i, j)].re)
    }
}

/// `t`-step forecast `Σ_i λ̄_iᵗ ξ_i(x) γ_i`.
///
/// Evaluated as `Σ_i λ̄_i^{t−1} (Φ_X̃ V h_i)(x) γ_i`, which needs no division by
/// `λ̄_i`; eigenpairs with vanishing eigenvalue therefore stay in the sum (their
/// contribution is zero for `t ≥ 2`) and are listed in the warnings.
pub fn kmd_forecast(
    dec: &SpectralDecomposition,
    modes: &ModeSet,
    x_query: MatRef<'_, f64>,
    t: usize,
) -> Result<KmdForecast> {
    if t == 0 {
        return Err(Error::input("horizon must be at least 1"));
    }
    if modes.modes.nrows() != dec.len() {
        return Err(Error::DimensionMismatch { expected: dec.len(), got: modes.modes.nrows() });
    }
    let raw = dec.eval_left_unscaled(x_query)?;
    let exponent = i32::try_from(t - 1).map_err(|_| Error::input("horizon too large"))?;
    let r = dec.len();
    let weighted = Mat::from_fn(r, modes.modes.ncols(), |i, j| {
        dec.eigenvalues[i].conj().powi(exponent) * modes.modes[(i, j)]
    });
    let values = &raw * &weighted;
    let mut max_abs = 0.0_f64;
    let mut max_im = 0.0_f64;
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            max_abs = max_abs.max(values[(i, j)].norm());
            max_im = max_im.max(values[(i, j)].im.abs());
        }
    }
    let imag_residue = if max_abs > 0.0 { max_im / max_abs } else { 0.0 };
    let mut warnings = Vec::new();
    let flagged: Vec<usize> = (0..r).filter(|&i| dec.flagged[i]).collect();
    if !flagged.is_empty() {
        warnings.push(format!("eigenpairs {flagged:?} have |λ| < {ZERO_EIGENVALUE_TOL:e}"));
    }
    if imag_residue > 1e-8 {
        warnings.push(format!("imaginary residue {imag_residue:.3e} exceeds 1e-8"));
    }
    Ok(KmdForecast { values, imag_residue, warnings })
}

/// One row of the spectrum export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
    /// `−lag·dt / ln|λ|`; `None` when it is not finite.
    pub implied_timescale: Option<f64>,
}

pub fn implied_timescale(lambda: c64, lag_time: f64) -> Option<f64> {
    let ts = -lag_time / lambda.norm().ln();
    ts.is_finite().then_some(ts)
}

/// Spectrum rows for a decomposition; `lag_time` is `lag · dt`.
pub fn spectrum_entries(dec: &SpectralDecomposition, lag_time: f64) -> Vec<SpectrumEntry> {
    dec.eigenvalues
        .iter()
        .map(|l| SpectrumEntry { re: l.re, im: l.im, modulus: l.norm(), implied_timescale: implied_timescale(*l, lag_time) })
        .collect()
}

pub fn write_spectrum_json<W: Write>(entries: &[SpectrumEntry], mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, entries).map_err(|e| Error::format(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

/// CSV with the query coordinates `x0..` followed by `re_i, im_i` per eigenfunction.
pub fn write_eigenfunctions_csv<W: Write>(x: MatRef<'_, f64>, values: MatRef<'_, c64>, w: W) -> Result<()> {
    if x.nrows() != values.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: values.nrows() });
    }
    let mut out = std::io::BufWriter::new(w);
    let mut header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    for i in 0..values.ncols() {
        header.push(format!("re_{i}"));
        header.push(format!("im_{i}"));
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..x.nrows() {
        let mut row: Vec<String> = (0..x.ncols()).map(|j| format!("{}", x[(i, j)])).collect();
        for j in 0..values.ncols() {
            row.push(format!("{}", values[(i, j)].re));
            row.push(format!("{}", values[(i, j)].im));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}
