//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"KOOPMODL"  u32 version (= 1)  u32 kind tag
//! u32 kernel family  f64 sigma  u32 degree  f64 offset
//! f64 lambda  u64 r  u64 m  u64 d
//! m×d input centers, m×d output centers, m×r U, m×r V   (f64, row-major)
//! ```
//!
//! Unused kernel fields are written as zero. KRR models store the identity as
//! `V`.

use std::io::{Read, Write};

use faer::Mat;

use super::{EstimatorKind, FittedEstimator};
use crate::data::io::{read_f64, read_u32, read_u64};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

pub const MODEL_MAGIC: &[u8; 8] = b"KOOPMODL";
pub const MODEL_VERSION: u32 = 1;

fn write_mat<W: Write>(w: &mut W, a: faer::MatRef<'_, f64>) -> Result<()> {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            w.write_all(&a[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_mat<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Mat<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Ok(Mat::from_fn(rows, cols, |i, j| data[i * cols + j]))
}

pub fn write_model<W: Write>(est: &FittedEstimator, mut w: W) -> Result<()> {
    let (family, sigma, degree, offset) = match est.kernel {
        KernelSpec::Rbf { sigma } => (0u32, sigma, 0u32, 0.0),
        KernelSpec::Linear => (1, 0.0, 0, 0.0),
        KernelSpec::Polynomial { degree, offset } => (2, 0.0, degree, offset),
    };
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&est.kind.tag().to_le_bytes())?;
    w.write_all(&family.to_le_bytes())?;
    w.write_all(&sigma.to_le_bytes())?;
    w.write_all(&degree.to_le_bytes())?;
    w.write_all(&offset.to_le_bytes())?;
    w.write_all(&est.lambda.to_le_bytes())?;
    w.write_all(&(est.factor_rank() as u64).to_le_bytes())?;
    w.write_all(&(est.n_centers() as u64).to_le_bytes())?;
    w.write_all(&(est.dim() as u64).to_le_bytes())?;
    write_mat(&mut w, est.x_centers())?;
    write_mat(&mut w, est.y_centers())?;
    write_mat(&mut w, est.u())?;
    write_mat(&mut w, est.v_dense().as_ref())?;
    w.flush()?;
    Ok(())
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::format(format!("{what} overflows")))
}

pub fn read_model<R: Read>(mut r: R) -> Result<FittedEstimator> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format("not a model file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(Error::format(format!("unsupported model version {version}")));
    }
    let tag = read_u32(&mut r)?;
    let kind = EstimatorKind::from_tag(tag).ok_or_else(|| Error::format(format!("unknown estimator tag {tag}")))?;
    let family = read_u32(&mut r)?;
    let sigma = read_f64(&mut r)?;
    let degree = read_u32(&mut r)?;
    let offset = read_f64(&mut r)?;
    let kernel = match family {
        0 => KernelSpec::Rbf { sigma },
        1 => KernelSpec::Linear,
        2 => KernelSpec::Polynomial { degree, offset },
        other => return Err(Error::format(format!("unknown kernel family {other}"))),
    };
    kernel.validate().map_err(|e| Error::format(e.to_string()))?;
    let lambda = read_f64(&mut r)?;
    let rank = to_usize(read_u64(&mut r)?, "rank")?;
    let m = to_usize(read_u64(&mut r)?, "center count")?;
    let d = to_usize(read_u64(&mut r)?, "dimension")?;
    if m == 0 || d == 0 || rank == 0 || rank > m {
        return Err(Error::format(format!("invalid model shape m={m}, d={d}, r={rank}")));
    }
    m.checked_mul(d.max(rank)).ok_or_else(|| Error::format("model size overflows"))?;
    let xc = read_mat(&mut r, m, d)?;
    let yc = read_mat(&mut r, m, d)?;
    let u = read_mat(&mut r, m, rank)?;
    let v = read_mat(&mut r, m, rank)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format(format!("{} trailing bytes after model", rest.len())));
    }
    let v = if matches!(kind, EstimatorKind::NysKrr | EstimatorKind::ExactKrr) {
        if v != Mat::<f64>::identity(m, m) {
            return Err(Error::format("KRR model must store the identity as its right factor"));
        }
        None
    } else {
        Some(v)
    };
    FittedEstimator::new(kind, kernel, lambda, rank, xc, yc, u, v).map_err(|e| Error::format(e.to_string()))
}
