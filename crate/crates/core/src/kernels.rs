//! Kernel functions and Gram-matrix assembly.
//!
//! The RBF kernel uses the `exp(-|x - y|² / (2σ²))` convention throughout.
//! States are the rows of a `faer` matrix.

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    Rbf { sigma: f64 },
    Linear,
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        let k = KernelSpec::Rbf { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        let k = KernelSpec::Polynomial { degree, offset };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::input(format!("RBF bandwidth must be positive, got {sigma}")))
            }
            KernelSpec::Polynomial { degree: 0, .. } => {
                Err(Error::input("polynomial degree must be at least 1"))
            }
            KernelSpec::Polynomial { offset, .. } if !offset.is_finite() => {
                Err(Error::input("polynomial offset must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value on two coordinate slices of equal length; no validation.
    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { sigma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Evaluates `k(x, y)`.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.is_empty() {
        return Err(Error::input("states must have dimension at least 1"));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::input("non-finite state coordinate"));
    }
    Ok(spec.eval_unchecked(x, y))
}

fn rows_of(a: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

/// Gram matrix `G[i][j] = k(a_i, b_j)` between the rows of `a` and `b`.
///
/// Rows are assembled in parallel; each entry is computed independently so the
/// result does not depend on the thread count.
pub fn gram(spec: &KernelSpec, a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    spec.validate()?;
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::input("Gram matrix of an empty point set"));
    }
    if a.ncols() == 0 {
        return Err(Error::input("states must have dimension at least 1"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
    }
    let ra = rows_of(a);
    let rb = rows_of(b);
    if !ra.iter().chain(&rb).flatten().all(|v| v.is_finite()) {
        return Err(Error::input("non-finite state coordinate"));
    }
    let rows: Vec<Vec<f64>> = ra
        .par_iter()
        .map(|x| rb.iter().map(|y| spec.eval_unchecked(x, y)).collect())
        .collect();
    Ok(Mat::from_fn(ra.len(), rb.len(), |i, j| rows[i][j]))
}

/// Diagonal `k(a_i, a_i)` for every row of `a`.
pub fn diag(spec: &KernelSpec, a: MatRef<'_, f64>) -> Vec<f64> {
    rows_of(a).iter().map(|x| spec.eval_unchecked(x, x)).collect()
}
