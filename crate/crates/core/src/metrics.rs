//! Forecast and spectral error measures, timing, and the benchmark report.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use faer::{c64, MatRef};
use serde::{Deserialize, Serialize};

use crate::data::{build_pairs, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::spectral::SpectralDecomposition;

/// Minimum number of lagged pairs for [`eigenfunction_residual`].
pub const MIN_RESIDUAL_PAIRS: usize = 100;

/// RMSE normalized by the standard deviation of `truth` (per-coordinate means,
/// pooled over coordinates).
pub fn nrmse(pred: MatRef<'_, f64>, truth: MatRef<'_, f64>) -> Result<f64> {
    if pred.nrows() != truth.nrows() || pred.ncols() != truth.ncols() {
        return Err(Error::input(format!(
            "shape mismatch: prediction {}×{}, truth {}×{}",
            pred.nrows(),
            pred.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    let (n, d) = (truth.nrows(), truth.ncols());
    if n == 0 || d == 0 {
        return Err(Error::input("empty evaluation window"));
    }
    let mut err = 0.0;
    let mut var = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| truth[(i, j)]).sum::<f64>() / n as f64;
        for i in 0..n {
            err += (pred[(i, j)] - truth[(i, j)]).powi(2);
            var += (truth[(i, j)] - mean).powi(2);
        }
    }
    let scale = (0..d).flat_map(|j| (0..n).map(move |i| (i, j))).fold(0.0_f64, |a, (i, j)| a.max(truth[(i, j)].abs()));
    if !(var > (n * d) as f64 * (1e-14 * scale).powi(2)) || !var.is_finite() {
        return Err(Error::Degenerate("truth is constant; nRMSE normalizer is zero".into()));
    }
    Ok((err / var).sqrt())
}

/// Greedy matching: true eigenvalues in descending modulus each take the
/// nearest unused estimate. Returns the largest matched distance, or infinity
/// when there are fewer estimates than true eigenvalues.
pub fn eigenvalue_error(estimated: &[c64], truth: &[c64]) -> f64 {
    if estimated.len() < truth.len() {
        return f64::INFINITY;
    }
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| truth[b].norm().total_cmp(&truth[a].norm()).then(a.cmp(&b)));
    let mut used = vec![false; estimated.len()];
    let mut worst = 0.0_f64;
    for i in order {
        let best = (0..estimated.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (estimated[a] - truth[i]).norm().total_cmp(&(estimated[b] - truth[i]).norm()))
            .expect("enough estimates");
        used[best] = true;
        worst = worst.max((estimated[best] - truth[i]).norm());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenResidual {
    /// `None` when the eigenfunction vanishes on the trajectory.
    pub value: Option<f64>,
    pub degenerate: bool,
}

/// `sqrt(mean_t |ξ_i(x_{t+lag}) − λ̄_i ξ_i(x_t)|²) / sqrt(mean_t |ξ_i(x_t)|²)`
/// for each eigenpair, on a held-out trajectory.
pub fn eigenfunction_residual(
    dec: &SpectralDecomposition,
    trajectory: &TrajectoryDataset,
    lag: usize,
) -> Result<Vec<EigenResidual>> {
    let pairs = build_pairs(trajectory, lag)?;
    if pairs.len() < MIN_RESIDUAL_PAIRS {
        return Err(Error::input(format!(
            "need at least {MIN_RESIDUAL_PAIRS} lagged pairs, got {}",
            pairs.len()
        )));
    }
    let now = dec.eval_left_unscaled(pairs.x())?;
    let next = dec.eval_left_unscaled(pairs.y())?;
    let n = pairs.len() as f64;
    Ok((0..dec.len())
        .map(|i| {
            let lam = dec.eigenvalues[i].conj();
            let mut num = 0.0;
            let mut den = 0.0;
            for t in 0..pairs.len() {
                num += (next[(t, i)] - lam * now[(t, i)]).norm_sqr();
                den += now[(t, i)].norm_sqr();
            }
            let coeff_scale = (0..dec.left_raw.nrows()).map(|k| dec.left_raw[(k, i)].norm_sqr()).sum::<f64>();
            let degenerate = !(den / n > 1e-24 * coeff_scale.max(f64::MIN_POSITIVE)) || den == 0.0;
            EigenResidual { value: (!degenerate).then(|| (num / den).sqrt()), degenerate }
        })
        .collect())
}

/// Runs `fit` once untimed, then three timed runs. Returns the last result and
/// the median wall-clock time in seconds.
pub fn time_fit<T>(mut fit: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    fit()?;
    let mut times = [0.0; 3];
    let mut last = None;
    for slot in times.iter_mut() {
        let start = Instant::now();
        let out = fit()?;
        *slot = start.elapsed().as_secs_f64();
        last = Some(out);
    }
    times.sort_by(f64::total_cmp);
    Ok((last.expect("three runs"), times[1]))
}

/// One cell of a benchmark sweep; serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRecord {
    pub estimator: String,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub fit_time: f64,
    pub predict_time: f64,
    pub train_risk: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl BenchmarkRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.fit_time >= 0.0 && self.predict_time >= 0.0) {
            return Err(Error::input("benchmark times must be nonnegative"));
        }
        let all = [self.fit_time, self.predict_time, self.train_risk, self.lambda];
        if all.iter().chain(self.metrics.values()).any(|v| !v.is_finite()) {
            return Err(Error::input("benchmark record contains a non-finite value"));
        }
        Ok(())
    }
}

pub fn write_records<W: Write>(records: &[BenchmarkRecord], mut w: W) -> Result<()> {
    for rec in records {
        rec.validate()?;
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<BenchmarkRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BenchmarkRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
