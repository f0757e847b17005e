//! Sketched estimators on `m` inducing points.
//!
//! PCR and RRR reduce to symmetric-definite pencils `A d = ν B d`. Both are
//! solved through a (jittered) Cholesky factor `B = L Lᵀ` and an SVD of a
//! factor of `L⁻¹ A L⁻ᵀ`, which avoids forming the squared product explicitly.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use super::{check_lambda, check_rank, EstimatorKind, FittedEstimator};
use crate::data::{LaggedPairs, NystromCenters};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_jittered, descending_order, max_abs, psd_pinv, psd_pinv_sqrt, rank_tolerance,
    select_columns, solve_lower, solve_lower_transpose, symmetrize,
};

fn check_centers(pairs: &LaggedPairs, centers: &NystromCenters) -> Result<()> {
    if centers.n_train() != pairs.len() {
        return Err(Error::input(format!(
            "centers were built for {} pairs, got {}",
            centers.n_train(),
            pairs.len()
        )));
    }
    if centers.x_centers.ncols() != pairs.dim() {
        return Err(Error::DimensionMismatch { expected: pairs.dim(), got: centers.x_centers.ncols() });
    }
    if max_abs(centers.k_xc_x.as_ref()) == 0.0 || max_abs(centers.k_yc_y.as_ref()) == 0.0 {
        return Err(Error::Degenerate("kernel blocks between centers and data are all zero".into()));
    }
    Ok(())
}

/// `K_X̃X K_XX̃ + nλ K_X̃X̃`.
fn regularized_cov(c: &NystromCenters, n: usize, lambda: f64) -> Mat<f64> {
    let mut b = &c.k_xc_x * c.k_xc_x.transpose();
    let s = n as f64 * lambda;
    for j in 0..b.ncols() {
        for i in 0..b.nrows() {
            b[(i, j)] += s * c.k_xc_xc[(i, j)];
        }
    }
    b
}

/// Thin SVD `F = Z diag(s) Qᵀ` with columns reordered deterministically and
/// signs fixed so that the largest entry of each `z` is positive (the matching
/// `q` is flipped with it).
struct OrderedSvd {
    s: Vec<f64>,
    z: Mat<f64>,
    q: Mat<f64>,
}

fn ordered_svd(f: MatRef<'_, f64>) -> Result<OrderedSvd> {
    let svd = f.thin_svd().map_err(|e| Error::numerical(format!("SVD failed: {e:?}")))?;
    let k = f.nrows().min(f.ncols());
    let s_raw: Vec<f64> = (0..k).map(|i| svd.S()[i]).collect();
    let z_raw = svd.U().to_owned();
    let order = descending_order(&s_raw, z_raw.as_ref());
    let s: Vec<f64> = order.iter().map(|&i| s_raw[i]).collect();
    let mut z = select_columns(z_raw.as_ref(), &order);
    let mut q = select_columns(svd.V(), &order);
    for j in 0..k {
        let mut best = 0;
        for i in 1..z.nrows() {
            if z[(i, j)].abs() > z[(best, j)].abs() {
                best = i;
            }
        }
        if z[(best, j)] < 0.0 {
            for i in 0..z.nrows() {
                z[(i, j)] = -z[(i, j)];
            }
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(OrderedSvd { s, z, q })
}

/// Number of pencil eigenvalues `ν = s²` above `max(rows, cols) · eps · ν_max`.
/// Values exactly at the threshold are excluded.
fn achievable_rank(nu: &[f64], rows: usize, cols: usize) -> usize {
    let nu_max = nu.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(rows, cols, nu_max);
    nu.iter().filter(|&&v| v > tol).count()
}

/// Nystrom kernel ridge regression:
/// `W = K_ỸỸ† K_ỸY K_XX̃ (K_X̃X K_XX̃ + nλ K_X̃X̃)†`.
///
/// Evaluated in whitened coordinates. With `F = K_X̃X̃^{†/2} K_X̃X` and
/// `G = K_ỸỸ^{†/2} K_ỸY`,
/// `W = K_ỸỸ^{†/2} G Fᵀ (F Fᵀ + nλ I)⁻¹ K_X̃X̃^{†/2}`;
/// the inner matrix is bounded below by `nλ`, so near-singular center Gram
/// matrices do not get inverted directly.
pub fn fit_nys_krr(pairs: &LaggedPairs, centers: &NystromCenters, lambda: f64) -> Result<FittedEstimator> {
    check_lambda(lambda)?;
    check_centers(pairs, centers)?;
    let n = pairs.len();
    let m = centers.len();
    let kx_isqrt = psd_pinv_sqrt(centers.k_xc_xc.as_ref())?;
    let ky_isqrt = psd_pinv_sqrt(centers.k_yc_yc.as_ref())?;
    let f = &kx_isqrt * &centers.k_xc_x;
    let g = &ky_isqrt * &centers.k_yc_y;
    let mut inner = &f * f.transpose();
    let nl = n as f64 * lambda;
    for i in 0..m {
        inner[(i, i)] += nl;
    }
    let inner = symmetrize(inner.as_ref());
    let ldlt = inner
        .ldlt(Side::Lower)
        .map_err(|e| Error::numerical(format!("F Fᵀ + nλI is not positive definite: {e:?}")))?;
    let right = ldlt.solve(&kx_isqrt);
    let w = &ky_isqrt * ((&g * f.transpose()) * right);
    FittedEstimator::new(
        EstimatorKind::NysKrr,
        centers.kernel,
        lambda,
        m,
        centers.x_centers.clone(),
        centers.y_centers.clone(),
        w,
        None,
    )
}

/// Nystrom principal component regression of rank `r`.
///
/// Solves `K_X̃X K_XX̃ d = ν K_X̃X̃ d` and rescales each eigenvector by `1/ν`,
/// which gives `dᵀ K_X̃X K_XX̃ K_X̃X̃† K_X̃X K_XX̃ d = 1`. Then
/// `W = K_ỸỸ† K_ỸY K_XX̃ D_r Λ_r D_rᵀ`, stored as `U = K_ỸỸ† K_ỸY K_XX̃ D_r Λ_r`,
/// `V = D_r`.
pub fn fit_nys_pcr(pairs: &LaggedPairs, centers: &NystromCenters, r: usize) -> Result<FittedEstimator> {
    let m = centers.len();
    check_rank(r, m)?;
    check_centers(pairs, centers)?;
    let n = pairs.len();
    let l = cholesky_jittered(centers.k_xc_xc.as_ref())?.factor;
    // L⁻¹ K_X̃X (K_X̃X)ᵀ L⁻ᵀ = F Fᵀ
    let f = solve_lower(l.as_ref(), centers.k_xc_x.as_ref());
    let svd = ordered_svd(f.as_ref())?;
    let nu: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    let achievable = achievable_rank(&nu, m, n);
    if achievable < r {
        return Err(Error::RankDeficient { requested: r, achievable });
    }
    let idx: Vec<usize> = (0..r).collect();
    let z = select_columns(svd.z.as_ref(), &idx);
    let q = select_columns(svd.q.as_ref(), &idx);
    // d_i = L⁻ᵀ z_i / ν_i
    let mut d = solve_lower_transpose(l.as_ref(), z.as_ref());
    for j in 0..r {
        for i in 0..m {
            d[(i, j)] /= nu[j];
        }
    }
    // K_XX̃ d_i ν_i = Fᵀ z_i = s_i q_i
    let mut qs = q;
    for j in 0..r {
        for i in 0..n {
            qs[(i, j)] *= svd.s[j];
        }
    }
    let k_yc_yc_pinv = psd_pinv(centers.k_yc_yc.as_ref())?;
    let u = &k_yc_yc_pinv * (&centers.k_yc_y * &qs);
    FittedEstimator::new(
        EstimatorKind::NysPcr,
        centers.kernel,
        0.0,
        r,
        centers.x_centers.clone(),
        centers.y_centers.clone(),
        u,
        Some(d),
    )
}

/// Nystrom reduced rank regression of rank `r`.
///
/// Solves `K_X̃X K_YỸ K_ỸỸ† K_ỸY K_XX̃ w = σ² (K_X̃X K_XX̃ + nλ K_X̃X̃) w`, keeps the
/// top `r` eigenvectors normalized so that `W_rᵀ K_X̃X K_YỸ K_ỸỸ† K_ỸY K_XX̃ W_r = I`,
/// and returns `U = D_r = K_ỸỸ† K_ỸY K_XX̃ W_r`,
/// `V = E_r = (K_X̃X K_XX̃ + nλ K_X̃X̃)† K_X̃X K_YỸ D_r`.
///
/// The pencil is symmetric, so its eigenvalues are real by construction.
pub fn fit_nys_rrr(
    pairs: &LaggedPairs,
    centers: &NystromCenters,
    lambda: f64,
    r: usize,
) -> Result<FittedEstimator> {
    check_lambda(lambda)?;
    let m = centers.len();
    check_rank(r, m)?;
    check_centers(pairs, centers)?;
    let n = pairs.len();
    let l = cholesky_jittered(regularized_cov(centers, n, lambda).as_ref())?.factor;
    // P = K_ỸY K_XX̃
    let p = &centers.k_yc_y * centers.k_xc_x.transpose();
    let half = psd_pinv_sqrt(centers.k_yc_yc.as_ref())?;
    // F = L⁻¹ Pᵀ K_ỸỸ^{†/2}, so F Fᵀ = L⁻¹ Pᵀ K_ỸỸ† P L⁻ᵀ
    let f = solve_lower(l.as_ref(), (p.transpose() * &half).as_ref());
    let svd = ordered_svd(f.as_ref())?;
    let sigma_sq: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    let achievable = achievable_rank(&sigma_sq, m, m);
    if achievable < r {
        return Err(Error::RankDeficient { requested: r, achievable });
    }
    let idx: Vec<usize> = (0..r).collect();
    let q = select_columns(svd.q.as_ref(), &idx);
    // K_ỸỸ† P w_i = K_ỸỸ^{†/2} Fᵀ z_i / s_i = K_ỸỸ^{†/2} q_i
    let d = &half * &q;
    let e = solve_lower_transpose(l.as_ref(), solve_lower(l.as_ref(), (p.transpose() * &d).as_ref()).as_ref());
    FittedEstimator::new(
        EstimatorKind::NysRrr,
        centers.kernel,
        lambda,
        r,
        centers.x_centers.clone(),
        centers.y_centers.clone(),
        d,
        Some(e),
    )
}

/// Normalized pencil eigenvectors `W_r` of the RRR problem together with `σ²`.
/// Exposed to the tests that check the normalization and `E_r = W_r Σ²`.
#[cfg(test)]
pub(crate) fn rrr_pencil_vectors(
    pairs: &LaggedPairs,
    centers: &NystromCenters,
    lambda: f64,
    r: usize,
) -> Result<(Mat<f64>, Vec<f64>)> {
    let n = pairs.len();
    let l = cholesky_jittered(regularized_cov(centers, n, lambda).as_ref())?.factor;
    let p = &centers.k_yc_y * centers.k_xc_x.transpose();
    let half = psd_pinv_sqrt(centers.k_yc_yc.as_ref())?;
    let f = solve_lower(l.as_ref(), (p.transpose() * &half).as_ref());
    let svd = ordered_svd(f.as_ref())?;
    let idx: Vec<usize> = (0..r).collect();
    let mut w = solve_lower_transpose(l.as_ref(), select_columns(svd.z.as_ref(), &idx).as_ref());
    for j in 0..r {
        for i in 0..w.nrows() {
            w[(i, j)] /= svd.s[j];
        }
    }
    Ok((w, svd.s[..r].iter().map(|s| s * s).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_pairs, sample_centers, TrajectoryDataset};
    use crate::estimators::empirical_risk;
    use crate::kernels::KernelSpec;
    use crate::linalg::numeric_rank;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn scalar_fixture() -> (LaggedPairs, NystromCenters) {
        // one pair, RBF: every kernel block is 1
        let t = TrajectoryDataset::from_rows(&[vec![0.3], vec![0.3]], None, "scalar").unwrap();
        let pairs = build_pairs(&t, 1).unwrap();
        let c = NystromCenters::all(&pairs, KernelSpec::rbf(1.0).unwrap()).unwrap();
        (pairs, c)
    }

    fn noisy_pairs(n: usize, d: usize, seed: u64) -> LaggedPairs {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut rows = vec![vec![0.0; d]];
        for t in 1..=n {
            let prev = rows[t - 1].clone();
            rows.push(
                (0..d)
                    .map(|j| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        0.8 * prev[(j + 1) % d] + 0.5 * e
                    })
                    .collect(),
            );
        }
        build_pairs(&TrajectoryDataset::from_rows(&rows, None, "noisy").unwrap(), 1).unwrap()
    }

    #[test]
    fn scalar_closed_forms() {
        let (pairs, c) = scalar_fixture();
        for lambda in [0.1, 1.0, 10.0] {
            let krr = fit_nys_krr(&pairs, &c, lambda).unwrap();
            let expect = 1.0 / (1.0 + lambda);
            assert!((krr.w()[(0, 0)] - expect).abs() <= 1e-15);
            let rrr = fit_nys_rrr(&pairs, &c, lambda, 1).unwrap();
            assert!((rrr.w()[(0, 0)] - expect).abs() <= 1e-14);
        }
        let pcr = fit_nys_pcr(&pairs, &c, 1).unwrap();
        assert!((pcr.w()[(0, 0)] - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn scalar_rrr_pencil() {
        let (pairs, c) = scalar_fixture();
        let (w, s2) = rrr_pencil_vectors(&pairs, &c, 1.0, 1).unwrap();
        assert!((s2[0] - 0.5).abs() <= 1e-15);
        // normalization wᵀ A w = 1 with A = 1
        assert!((w[(0, 0)].abs() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn input_errors() {
        let (pairs, c) = scalar_fixture();
        assert!(fit_nys_krr(&pairs, &c, 0.0).is_err());
        assert!(fit_nys_krr(&pairs, &c, -1.0).is_err());
        assert!(fit_nys_pcr(&pairs, &c, 2).is_err());
        assert!(fit_nys_pcr(&pairs, &c, 0).is_err());
        assert!(fit_nys_rrr(&pairs, &c, 1.0, 2).is_err());
    }

    #[test]
    fn zero_blocks_are_degenerate() {
        let t = TrajectoryDataset::from_rows(&[vec![0.0], vec![0.0], vec![0.0]], None, "z").unwrap();
        let pairs = build_pairs(&t, 1).unwrap();
        let c = NystromCenters::all(&pairs, KernelSpec::Linear).unwrap();
        assert!(matches!(fit_nys_krr(&pairs, &c, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rank_deficiency_is_reported() {
        // linear kernel on 2-d data: the pencil has rank 2
        let pairs = noisy_pairs(40, 2, 1);
        let c = sample_centers(&pairs, KernelSpec::Linear, 6, 3, true).unwrap();
        match fit_nys_pcr(&pairs, &c, 4) {
            Err(Error::RankDeficient { requested: 4, achievable }) => assert_eq!(achievable, 2),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        assert!(fit_nys_pcr(&pairs, &c, 2).is_ok());
    }

    #[test]
    fn huge_lambda_kills_the_operator() {
        let pairs = noisy_pairs(60, 2, 2);
        let c = sample_centers(&pairs, KernelSpec::rbf(1.0).unwrap(), 10, 4, true).unwrap();
        let est = fit_nys_krr(&pairs, &c, 1e9).unwrap();
        let n = pairs.len() as f64;
        let base = {
            let kx_pinv = psd_pinv(c.k_xc_xc.as_ref()).unwrap();
            let ky_pinv = psd_pinv(c.k_yc_yc.as_ref()).unwrap();
            &ky_pinv * (&c.k_yc_y * c.k_xc_x.transpose()) * &kx_pinv
        };
        let bound = 2e-9 * max_abs(base.as_ref()) / n;
        assert!(max_abs(est.w().as_ref()) <= bound);
        let pred = est.predict(pairs.x()).unwrap();
        assert!(max_abs(pred.as_ref()) < 1e-6);
    }

    #[test]
    fn pcr_normalization() {
        let pairs = noisy_pairs(80, 2, 3);
        let c = sample_centers(&pairs, KernelSpec::rbf(1.5).unwrap(), 12, 5, true).unwrap();
        let est = fit_nys_pcr(&pairs, &c, 5).unwrap();
        let d = est.v_dense();
        let g = &c.k_xc_x * c.k_xc_x.transpose();
        let kpinv = psd_pinv(c.k_xc_xc.as_ref()).unwrap();
        let gram = d.transpose() * &g * &kpinv * &g * &d;
        for i in 0..5 {
            for j in 0..5 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - target).abs() < 1e-6, "({i},{j}) = {}", gram[(i, j)]);
            }
        }
    }

    #[test]
    fn rrr_normalization_and_right_factor() {
        let pairs = noisy_pairs(80, 2, 4);
        // narrow bandwidth keeps K_ỸỸ well conditioned, so the explicit product is accurate
        let c = sample_centers(&pairs, KernelSpec::rbf(0.5).unwrap(), 12, 6, false).unwrap();
        let lambda = 1e-2;
        let est = fit_nys_rrr(&pairs, &c, lambda, 4).unwrap();
        let (w, s2) = rrr_pencil_vectors(&pairs, &c, lambda, 4).unwrap();
        let p = &c.k_yc_y * c.k_xc_x.transpose();
        let a = p.transpose() * psd_pinv(c.k_yc_yc.as_ref()).unwrap() * &p;
        let gram = w.transpose() * &a * &w;
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - target).abs() < 1e-8, "({i},{j}) = {:e}", gram[(i, j)] - target);
            }
        }
        // E_r = W_r Σ²
        let e = est.v_dense();
        let scale = max_abs(e.as_ref());
        for j in 0..4 {
            for i in 0..12 {
                assert!((e[(i, j)] - w[(i, j)] * s2[j]).abs() <= 1e-8 * scale);
            }
        }
        // σ² descending
        assert!(s2.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn krr_training_risk_grows_with_lambda() {
        let pairs = noisy_pairs(100, 2, 5);
        let c = sample_centers(&pairs, KernelSpec::rbf(1.0).unwrap(), 20, 7, true).unwrap();
        let mut last = 0.0;
        for lambda in [1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let est = fit_nys_krr(&pairs, &c, lambda).unwrap();
            let risk = empirical_risk(&est, pairs.x(), pairs.y()).unwrap();
            assert!(risk >= last - 1e-12, "risk {risk} after {last}");
            last = risk;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn low_rank_fits_respect_the_rank(seed in 0u64..1000, r in 1usize..6, m in 8usize..16) {
            let pairs = noisy_pairs(60, 3, seed);
            let c = sample_centers(&pairs, KernelSpec::rbf(1.2).unwrap(), m, seed, seed % 2 == 0).unwrap();
            for est in [
                fit_nys_pcr(&pairs, &c, r).unwrap(),
                fit_nys_rrr(&pairs, &c, 1e-3, r).unwrap(),
            ] {
                prop_assert!(numeric_rank(est.w().as_ref(), 1e-10).unwrap() <= r);
                prop_assert_eq!(est.factor_rank(), r);
            }
        }

        #[test]
        fn fits_are_deterministic(seed in 0u64..1000) {
            let pairs = noisy_pairs(40, 2, seed);
            let c = sample_centers(&pairs, KernelSpec::rbf(1.0).unwrap(), 10, seed, true).unwrap();
            prop_assert_eq!(fit_nys_rrr(&pairs, &c, 1e-3, 3).unwrap(), fit_nys_rrr(&pairs, &c, 1e-3, 3).unwrap());
            prop_assert_eq!(fit_nys_pcr(&pairs, &c, 3).unwrap(), fit_nys_pcr(&pairs, &c, 3).unwrap());
        }
    }
}
