//! Synthetic systems with known ground truth.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};

/// Steps discarded before recording the stochastic systems.
pub const BURN_IN: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SystemSpec {
    Lorenz63 { sigma: f64, rho: f64, beta: f64, dt: f64 },
    /// `x_{t+1} = a x_t + s ε_t`.
    Ar1 { a: f64, noise_std: f64, seed: u64 },
    /// `x_{t+1} = A x_t + L ε_t` with `L Lᵀ` the noise covariance.
    LinearGaussian { a: Vec<Vec<f64>>, noise_cov: Vec<Vec<f64>>, seed: u64 },
}

impl SystemSpec {
    pub fn lorenz63(dt: f64) -> Self {
        SystemSpec::Lorenz63 { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, dt }
    }

    pub fn ar1(a: f64, noise_std: f64, seed: u64) -> Self {
        SystemSpec::Ar1 { a, noise_std, seed }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::Lorenz63 { .. } => 3,
            SystemSpec::Ar1 { .. } => 1,
            SystemSpec::LinearGaussian { a, .. } => a.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SystemSpec::Lorenz63 { sigma, rho, beta, dt } => {
                if ![sigma, rho, beta].iter().all(|v| v.is_finite()) {
                    return Err(Error::input("Lorenz parameters must be finite"));
                }
                if !(*dt > 0.0 && dt.is_finite()) {
                    return Err(Error::input(format!("time step must be positive, got {dt}")));
                }
            }
            SystemSpec::Ar1 { a, noise_std, .. } => {
                if !(a.abs() < 1.0) {
                    return Err(Error::input(format!("AR(1) coefficient must satisfy |a| < 1, got {a}")));
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return Err(Error::input(format!("noise std must be nonnegative, got {noise_std}")));
                }
            }
            SystemSpec::LinearGaussian { a, noise_cov, .. } => {
                let d = a.len();
                if d == 0 || a.iter().any(|r| r.len() != d) {
                    return Err(Error::input("transition matrix must be square and non-empty"));
                }
                if noise_cov.len() != d || noise_cov.iter().any(|r| r.len() != d) {
                    return Err(Error::input("noise covariance must match the transition matrix"));
                }
                let rho = spectral_radius(&square(a))?;
                if !(rho < 1.0) {
                    return Err(Error::input(format!("transition matrix has spectral radius {rho} >= 1")));
                }
                noise_factor(noise_cov)?;
            }
        }
        Ok(())
    }
}

fn square(rows: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

fn spectral_radius(a: &Mat<f64>) -> Result<f64> {
    let ev = a
        .eigenvalues()
        .map_err(|e| Error::numerical(format!("eigensolver failed: {e:?}")))?;
    Ok(ev.iter().fold(0.0, |acc: f64, v| acc.max(v.norm())))
}

/// Lower factor of a PSD covariance (zero rows and columns allowed).
fn noise_factor(cov: &[Vec<f64>]) -> Result<Mat<f64>> {
    let c = square(cov);
    let d = c.nrows();
    for i in 0..d {
        for j in 0..d {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * (c[(i, i)].abs() + c[(j, j)].abs()).max(1e-300) {
                return Err(Error::input("noise covariance must be symmetric"));
            }
        }
    }
    let eig = crate::linalg::sym_eigen(c.as_ref())?;
    let scale = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if eig.values.iter().any(|v| *v < -1e-12 * scale.max(1.0)) {
        return Err(Error::input("noise covariance must be positive semi-definite"));
    }
    match c.llt(Side::Lower) {
        Ok(llt) => Ok(llt.L().to_owned()),
        // singular covariance: use the symmetric square root instead
        Err(_) => crate::linalg::psd_sqrt(c.as_ref()),
    }
}

/// Lorenz '63 vector field.
fn lorenz_rhs(s: [f64; 3], sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    [sigma * (s[1] - s[0]), s[0] * (rho - s[2]) - s[1], s[0] * s[1] - beta * s[2]]
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step(s: [f64; 3], dt: f64, sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = lorenz_rhs(s, sigma, rho, beta);
    let k2 = lorenz_rhs(add(s, k1, dt / 2.0), sigma, rho, beta);
    let k3 = lorenz_rhs(add(s, k2, dt / 2.0), sigma, rho, beta);
    let k4 = lorenz_rhs(add(s, k3, dt), sigma, rho, beta);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Simulates `steps` states. For Lorenz the first row is `x0`; the stochastic
/// systems start from `x0`, discard [`BURN_IN`] steps and then record.
pub fn simulate(spec: &SystemSpec, x0: &[f64], steps: usize) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let d = spec.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("initial state must be finite"));
    }
    if steps < 2 {
        return Err(Error::input("need at least 2 steps"));
    }
    let mut out = Mat::<f64>::zeros(steps, d);
    let diverged = |step: usize, row: &[f64]| -> Result<()> {
        if row.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Diverged { step })
        }
    };
    match spec {
        SystemSpec::Lorenz63 { sigma, rho, beta, dt } => {
            let mut s = [x0[0], x0[1], x0[2]];
            for t in 0..steps {
                if t > 0 {
                    s = rk4_step(s, *dt, *sigma, *rho, *beta);
                    diverged(t, &s)?;
                }
                for j in 0..3 {
                    out[(t, j)] = s[j];
                }
            }
            TrajectoryDataset::new(out, Some(*dt), "lorenz63")
        }
        SystemSpec::Ar1 { a, noise_std, seed } => {
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let mut x = x0[0];
            for t in 0..BURN_IN + steps {
                if t > 0 {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = a * x + noise_std * e;
                    diverged(t, &[x])?;
                }
                if t >= BURN_IN {
                    out[(t - BURN_IN, 0)] = x;
                }
            }
            TrajectoryDataset::new(out, None, "ar1")
        }
        SystemSpec::LinearGaussian { a, noise_cov, seed } => {
            let am = square(a);
            let l = noise_factor(noise_cov)?;
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let mut x = x0.to_vec();
            let mut eps = vec![0.0; d];
            for t in 0..BURN_IN + steps {
                if t > 0 {
                    for e in eps.iter_mut() {
                        *e = StandardNormal.sample(&mut rng);
                    }
                    let next: Vec<f64> = (0..d)
                        .map(|i| {
                            let drift: f64 = (0..d).map(|j| am[(i, j)] * x[j]).sum();
                            let noise: f64 = (0..d).map(|j| l[(i, j)] * eps[j]).sum();
                            drift + noise
                        })
                        .collect();
                    x = next;
                    diverged(t, &x)?;
                }
                if t >= BURN_IN {
                    for j in 0..d {
                        out[(t - BURN_IN, j)] = x[j];
                    }
                }
            }
            TrajectoryDataset::new(out, None, "linear_gaussian")
        }
    }
}

/// Initial condition drawn uniformly from `[−10, 10]³`.
pub fn lorenz_initial_condition(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    [0, 1, 2].map(|_| rng.random_range(-10.0..10.0))
}

/// `a^k`, the `k`-th Koopman eigenvalue of a stationary Gaussian AR(1) process
/// (eigenfunctions are Hermite polynomials of the standardized state).
pub fn ar1_truth(a: f64, k: u32) -> f64 {
    a.powi(k as i32)
}
