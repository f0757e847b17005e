//! Fitted estimators share the form `Â = Φ_Ỹ U Vᵀ Φ_X̃*`: two sets of centers and
//! a real middle matrix `W = U Vᵀ` kept in factored form.

mod exact;
mod nystrom;
mod serialize;

pub use exact::{fit_exact_krr, fit_exact_pcr, fit_exact_rrr, ExactOptions};
pub use nystrom::{fit_nys_krr, fit_nys_pcr, fit_nys_rrr};
pub use serialize::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use std::fmt;
use std::str::FromStr;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{diag, gram, KernelSpec};
use crate::linalg::{all_finite, numeric_rank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    NysKrr,
    NysPcr,
    NysRrr,
    ExactKrr,
    ExactPcr,
    ExactRrr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::NysKrr,
        EstimatorKind::NysPcr,
        EstimatorKind::NysRrr,
        EstimatorKind::ExactKrr,
        EstimatorKind::ExactPcr,
        EstimatorKind::ExactRrr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::NysKrr => "nys-krr",
            EstimatorKind::NysPcr => "nys-pcr",
            EstimatorKind::NysRrr => "nys-rrr",
            EstimatorKind::ExactKrr => "exact-krr",
            EstimatorKind::ExactPcr => "exact-pcr",
            EstimatorKind::ExactRrr => "exact-rrr",
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, EstimatorKind::ExactKrr | EstimatorKind::ExactPcr | EstimatorKind::ExactRrr)
    }

    /// Whether the estimator takes a Tikhonov parameter.
    pub fn uses_lambda(self) -> bool {
        !matches!(self, EstimatorKind::NysPcr | EstimatorKind::ExactPcr)
    }

    /// Whether the estimator takes a target rank.
    pub fn uses_rank(self) -> bool {
        !matches!(self, EstimatorKind::NysKrr | EstimatorKind::ExactKrr)
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            EstimatorKind::NysKrr => 0,
            EstimatorKind::NysPcr => 1,
            EstimatorKind::NysRrr => 2,
            EstimatorKind::ExactKrr => 3,
            EstimatorKind::ExactPcr => 4,
            EstimatorKind::ExactRrr => 5,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::input(format!("unknown estimator '{s}'")))
    }
}

/// A fitted operator `Â = Φ_Ỹ U Vᵀ Φ_X̃*`.
///
/// `V = None` stands for the identity (KRR kinds, where `U = W` is `m × m`).
/// Exact kinds use every training pair as a center.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEstimator {
    pub kind: EstimatorKind,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub rank: usize,
    x_centers: Mat<f64>,
    y_centers: Mat<f64>,
    u: Mat<f64>,
    v: Option<Mat<f64>>,
}

impl FittedEstimator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: EstimatorKind,
        kernel: KernelSpec,
        lambda: f64,
        rank: usize,
        x_centers: Mat<f64>,
        y_centers: Mat<f64>,
        u: Mat<f64>,
        v: Option<Mat<f64>>,
    ) -> Result<Self> {
        kernel.validate()?;
        let m = x_centers.nrows();
        if m == 0 || y_centers.nrows() != m {
            return Err(Error::input("input and output centers must be non-empty and of equal count"));
        }
        if x_centers.ncols() != y_centers.ncols() {
            return Err(Error::DimensionMismatch { expected: x_centers.ncols(), got: y_centers.ncols() });
        }
        if u.nrows() != m {
            return Err(Error::DimensionMismatch { expected: m, got: u.nrows() });
        }
        match &v {
            Some(v) if v.nrows() != m || v.ncols() != u.ncols() => {
                return Err(Error::input(format!(
                    "factor shapes differ: U is {}x{}, V is {}x{}",
                    u.nrows(),
                    u.ncols(),
                    v.nrows(),
                    v.ncols()
                )));
            }
            None if u.ncols() != m => {
                return Err(Error::input("identity right factor requires a square U"));
            }
            _ => {}
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!("regularization must be finite and nonnegative, got {lambda}")));
        }
        let finite = all_finite(u.as_ref())
            && v.as_ref().is_none_or(|v| all_finite(v.as_ref()))
            && all_finite(x_centers.as_ref())
            && all_finite(y_centers.as_ref());
        if !finite {
            return Err(Error::numerical("estimator has non-finite entries"));
        }
        Ok(Self { kind, kernel, lambda, rank, x_centers, y_centers, u, v })
    }

    pub fn n_centers(&self) -> usize {
        self.x_centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x_centers.ncols()
    }

    /// Number of columns of the factors.
    pub fn factor_rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn x_centers(&self) -> MatRef<'_, f64> {
        self.x_centers.as_ref()
    }

    pub fn y_centers(&self) -> MatRef<'_, f64> {
        self.y_centers.as_ref()
    }

    pub fn u(&self) -> MatRef<'_, f64> {
        self.u.as_ref()
    }

    /// Right factor; `None` means the identity.
    pub fn v(&self) -> Option<MatRef<'_, f64>> {
        self.v.as_ref().map(Mat::as_ref)
    }

    /// Right factor as a dense matrix.
    pub fn v_dense(&self) -> Mat<f64> {
        match &self.v {
            Some(v) => v.clone(),
            None => Mat::identity(self.n_centers(), self.n_centers()),
        }
    }

    /// `A V` for `A` with `m` columns.
    pub(crate) fn right_apply(&self, a: MatRef<'_, f64>) -> Mat<f64> {
        match &self.v {
            Some(v) => a * v,
            None => a.to_owned(),
        }
    }

    /// `Vᵀ B` for `B` with `m` rows.
    pub(crate) fn right_apply_t(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        match &self.v {
            Some(v) => v.transpose() * b,
            None => b.to_owned(),
        }
    }

    /// The dense `m × m` middle matrix `W = U Vᵀ`.
    pub fn w(&self) -> Mat<f64> {
        match &self.v {
            Some(v) => &self.u * v.transpose(),
            None => self.u.clone(),
        }
    }

    /// Number of singular values of `W` above `1e-10 · σ_max`.
    pub fn effective_rank(&self) -> Result<usize> {
        numeric_rank(self.w().as_ref(), 1e-10)
    }

    /// `W u` for the columns `u` of `k_xc_q` (`m × q`), computed through the factors.
    pub(crate) fn apply_w(&self, k_xc_q: MatRef<'_, f64>) -> Mat<f64> {
        &self.u * self.right_apply_t(k_xc_q)
    }

    /// One-step forecast of the state, i.e. the identity observable.
    pub fn predict(&self, x_query: MatRef<'_, f64>) -> Result<Mat<f64>> {
        crate::spectral::forecast(self, self.y_centers.as_ref(), x_query)
    }

    /// `‖Φ_Ỹ W Φ_X̃*‖²_HS = tr(Wᵀ K_ỸỸ W K_X̃X̃)`.
    pub fn hs_norm_sq(&self) -> Result<f64> {
        let k_xx = gram(&self.kernel, self.x_centers(), self.x_centers())?;
        let k_yy = gram(&self.kernel, self.y_centers(), self.y_centers())?;
        // with W = U Vᵀ: tr(V Uᵀ K_yy U Vᵀ K_xx) = tr((Uᵀ K_yy U)(Vᵀ K_xx V))
        let a = self.u.transpose() * (&k_yy * &self.u);
        let kv = self.right_apply(k_xx.as_ref());
        let b = self.right_apply_t(kv.as_ref());
        let r = a.nrows();
        let mut t = 0.0;
        for i in 0..r {
            for j in 0..r {
                t += a[(i, j)] * b[(j, i)];
            }
        }
        Ok(t.max(0.0))
    }
}

/// Mean squared feature-space error `(1/n) Σ ‖φ(y_i) − Â φ(x_i)‖²` via the
/// kernel trick. Slightly negative round-off values are clamped to zero.
pub fn empirical_risk(est: &FittedEstimator, x: MatRef<'_, f64>, y: MatRef<'_, f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.nrows() });
    }
    for d in [x.ncols(), y.ncols()] {
        if d != est.dim() {
            return Err(Error::DimensionMismatch { expected: est.dim(), got: d });
        }
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::input("empty evaluation set"));
    }
    let k_xc_x = gram(&est.kernel, est.x_centers(), x)?;
    let k_yc_y = gram(&est.kernel, est.y_centers(), y)?;
    let k_yc_yc = gram(&est.kernel, est.y_centers(), est.y_centers())?;
    let z = est.apply_w(k_xc_x.as_ref());
    let kz = &k_yc_yc * &z;
    let k_yy = diag(&est.kernel, y);
    let m = est.n_centers();
    let mut total = 0.0;
    for i in 0..n {
        let mut cross = 0.0;
        let mut quad = 0.0;
        for j in 0..m {
            cross += k_yc_y[(j, i)] * z[(j, i)];
            quad += z[(j, i)] * kz[(j, i)];
        }
        total += k_yy[i] - 2.0 * cross + quad;
    }
    Ok((total / n as f64).max(0.0))
}

/// `empirical_risk + λ ‖Â‖²_HS` on the given pairs.
pub fn regularized_objective(
    est: &FittedEstimator,
    x: MatRef<'_, f64>,
    y: MatRef<'_, f64>,
    lambda: f64,
) -> Result<f64> {
    Ok(empirical_risk(est, x, y)? + lambda * est.hs_norm_sq()?)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("regularization must be positive, got {lambda}")))
    }
}

pub(crate) fn check_rank(r: usize, m: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::input("rank must be positive"));
    }
    if r > m {
        return Err(Error::input(format!("rank {r} exceeds the number of centers {m}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_pairs, NystromCenters, TrajectoryDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn scalar_pairs() -> crate::data::LaggedPairs {
        let t = TrajectoryDataset::from_rows(&[vec![0.4], vec![-0.7]], None, "scalar").unwrap();
        build_pairs(&t, 1).unwrap()
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
            assert_eq!(EstimatorKind::from_tag(k.tag()), Some(k));
        }
        assert!("krr".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn zero_operator_has_unit_risk_for_rbf() {
        let pairs = scalar_pairs();
        let kernel = KernelSpec::rbf(1.0).unwrap();
        let est = FittedEstimator::new(
            EstimatorKind::NysKrr,
            kernel,
            1.0,
            1,
            pairs.x().to_owned(),
            pairs.y().to_owned(),
            Mat::zeros(1, 1),
            None,
        )
        .unwrap();
        assert_eq!(empirical_risk(&est, pairs.x(), pairs.y()).unwrap(), 1.0);
    }

    #[test]
    fn near_interpolation_in_scalar_case() {
        let pairs = scalar_pairs();
        let c = NystromCenters::all(&pairs, KernelSpec::rbf(1.0).unwrap()).unwrap();
        let est = fit_nys_krr(&pairs, &c, 1e-12).unwrap();
        assert!(empirical_risk(&est, pairs.x(), pairs.y()).unwrap() <= 1e-6);
    }

    // Degree-2 polynomial kernel on R², φ written out explicitly:
    // (⟨x,y⟩ + c)² = ⟨φ(x), φ(y)⟩ with
    // φ(x) = (x₁², x₂², √2 x₁x₂, √(2c) x₁, √(2c) x₂, c).
    fn feature(x: &[f64], c: f64) -> [f64; 6] {
        let s = 2f64.sqrt();
        let t = (2.0 * c).sqrt();
        [x[0] * x[0], x[1] * x[1], s * x[0] * x[1], t * x[0], t * x[1], c]
    }

    #[test]
    fn risk_matches_explicit_feature_map() {
        let c = 0.7;
        let kernel = KernelSpec::polynomial(2, c).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut pt = |n: usize| Mat::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let (xc, yc, x, y) = (pt(4), pt(4), pt(9), pt(9));
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let u = Mat::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let v = Mat::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let est = FittedEstimator::new(
            EstimatorKind::NysRrr,
            kernel,
            0.1,
            2,
            xc.clone(),
            yc.clone(),
            u.clone(),
            Some(v.clone()),
        )
        .unwrap();
        let w = &u * v.transpose();
        let row = |a: &Mat<f64>, i: usize| [a[(i, 0)], a[(i, 1)]];
        // the operator acting on features: A φ(x) = Σ_jk φ(ỹ_j) W_jk ⟨φ(x̃_k), φ(x)⟩
        let mut total = 0.0;
        for i in 0..9 {
            let fx = feature(&row(&x, i), c);
            let fy = feature(&row(&y, i), c);
            let mut pred = [0.0; 6];
            for j in 0..4 {
                let fyc = feature(&row(&yc, j), c);
                for k in 0..4 {
                    let fxc = feature(&row(&xc, k), c);
                    let inner: f64 = fxc.iter().zip(&fx).map(|(a, b)| a * b).sum();
                    for (p, f) in pred.iter_mut().zip(&fyc) {
                        *p += f * w[(j, k)] * inner;
                    }
                }
            }
            total += fy.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let explicit = total / 9.0;
        let risk = empirical_risk(&est, x.as_ref(), y.as_ref()).unwrap();
        assert!((risk - explicit).abs() <= 1e-12 * explicit.max(1.0), "{risk} vs {explicit}");

        // HS norm from the same explicit map
        let mut op = [[0.0; 6]; 6];
        for j in 0..4 {
            let fyc = feature(&row(&yc, j), c);
            for k in 0..4 {
                let fxc = feature(&row(&xc, k), c);
                for a in 0..6 {
                    for b in 0..6 {
                        op[a][b] += fyc[a] * w[(j, k)] * fxc[b];
                    }
                }
            }
        }
        let hs: f64 = op.iter().flatten().map(|v| v * v).sum();
        assert!((est.hs_norm_sq().unwrap() - hs).abs() <= 1e-12 * hs.max(1.0));
    }

    #[test]
    fn risk_rejects_mismatched_inputs() {
        let pairs = scalar_pairs();
        let c = NystromCenters::all(&pairs, KernelSpec::Linear).unwrap();
        let est = fit_nys_krr(&pairs, &c, 1.0).unwrap();
        let wide = Mat::<f64>::zeros(1, 2);
        assert!(empirical_risk(&est, wide.as_ref(), wide.as_ref()).is_err());
        let two = Mat::<f64>::zeros(2, 1);
        assert!(empirical_risk(&est, pairs.x(), two.as_ref()).is_err());
    }

    #[test]
    fn constructor_validates_shapes() {
        let c = Mat::<f64>::zeros(3, 1);
        let ok = FittedEstimator::new(
            EstimatorKind::NysPcr,
            KernelSpec::Linear,
            0.0,
            2,
            c.clone(),
            c.clone(),
            Mat::zeros(3, 2),
            Some(Mat::zeros(3, 2)),
        );
        assert!(ok.is_ok());
        let bad = FittedEstimator::new(
            EstimatorKind::NysPcr,
            KernelSpec::Linear,
            0.0,
            2,
            c.clone(),
            c,
            Mat::zeros(3, 2),
            Some(Mat::zeros(3, 1)),
        );
        assert!(bad.is_err());
    }
}
