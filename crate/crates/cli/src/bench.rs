//! Benchmark sweeps.
//!
//! The trajectory is split into contiguous blocks: the first 80% of the states
//! train, the next 10% are held back, the last 10% test. Each cell fits on the
//! first `n` training pairs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use faer::{Mat, MatRef};

use nyskoop::data::{build_pairs, LaggedPairs, TrajectoryDataset};
use nyskoop::estimators::{empirical_risk, EstimatorKind, FittedEstimator};
use nyskoop::kernels::KernelSpec;
use nyskoop::metrics::{nrmse, time_fit, write_records, BenchmarkRecord};

use crate::commands::{load_trajectory, output, FitPlan, DEFAULT_LAMBDA, DEFAULT_MAX_N};
use crate::config::{check_input, check_output, parse_list, require};
use crate::error::{CliError, CliResult};
use crate::{BenchMode, BenchmarkArgs};

const TRAIN_SHARE: f64 = 0.8;
const TEST_SHARE: f64 = 0.1;

fn column(a: MatRef<'_, f64>, j: usize) -> Mat<f64> {
    Mat::from_fn(a.nrows(), 1, |i, _| a[(i, j)])
}

/// nRMSE of `h`-fold rollouts on the test block: the first coordinate and all
/// coordinates.
fn rollout_errors(est: &FittedEstimator, test: &TrajectoryDataset, lag: usize, h: usize) -> nyskoop::Result<(f64, f64)> {
    let ahead = h * lag;
    let count = test.len() - ahead;
    let states = test.states();
    let mut x = states.subrows(0, count).to_owned();
    for _ in 0..h {
        x = est.predict(x.as_ref())?;
    }
    let truth = states.subrows(ahead, count);
    let first = nrmse(column(x.as_ref(), 0).as_ref(), column(truth, 0).as_ref())?;
    let all = nrmse(x.as_ref(), truth)?;
    Ok((first, all))
}

struct Cell {
    kind: EstimatorKind,
    n: usize,
    plan: FitPlan,
}

pub fn benchmark(a: BenchmarkArgs) -> CliResult<()> {
    let data = require(a.data.clone(), "data")?;
    let kinds: Vec<EstimatorKind> = parse_list::<String>(&require(a.estimators.clone(), "estimators")?, "estimators")?
        .iter()
        .map(|s| s.parse().map_err(|e: nyskoop::Error| CliError::usage(e.to_string())))
        .collect::<CliResult<_>>()?;
    let sizes: Vec<usize> = parse_list(&require(a.n.clone(), "n")?, "n")?;
    let seeds: Vec<u64> = match &a.seeds {
        Some(s) => parse_list(s, "seeds")?,
        None => vec![0],
    };
    let horizons: Vec<usize> = match &a.horizon {
        Some(s) => parse_list(s, "horizon")?,
        None => vec![1],
    };
    if horizons.contains(&0) {
        return Err(CliError::usage("--horizon values must be at least 1"));
    }
    let mode = a.mode.unwrap_or(BenchMode::Sweep);
    let kernel = a.kernel.spec()?;
    let m_fixed = a.m.unwrap_or(250);
    let r = a.r.unwrap_or(25);
    let lambda = a.lambda.unwrap_or(DEFAULT_LAMBDA);
    let rate_c = a.rate_c.unwrap_or(2.0);
    let lag = a.train_lag.unwrap_or(1);
    let max_n = a.max_n.unwrap_or(DEFAULT_MAX_N);
    if lag == 0 {
        return Err(CliError::usage("--train-lag must be at least 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CliError::usage(format!("--lambda must be positive, got {lambda}")));
    }
    if mode == BenchMode::Rates {
        if a.m.is_some() {
            return Err(CliError::usage("--m does not apply to the rates mode (m = ceil(c sqrt(n)))"));
        }
        if !(rate_c > 0.0 && rate_c.is_finite()) {
            return Err(CliError::usage("--rate-c must be positive"));
        }
    } else if a.rate_c.is_some() {
        return Err(CliError::usage("--rate-c only applies to the rates mode"));
    }

    let mut cells = Vec::new();
    for &kind in &kinds {
        for &n in &sizes {
            let m = match mode {
                BenchMode::Sweep => m_fixed,
                BenchMode::Rates => (rate_c * (n as f64).sqrt()).ceil() as usize,
            };
            let lambda_n = match mode {
                BenchMode::Sweep => lambda,
                BenchMode::Rates => lambda / (n as f64).sqrt(),
            };
            let plan = FitPlan::new(
                kind,
                kernel,
                (!kind.is_exact()).then_some(m),
                kind.uses_rank().then_some(r),
                kind.uses_lambda().then_some(lambda_n),
                0,
                false,
                max_n,
            )?;
            plan.check_size(n)?;
            cells.push(Cell { kind, n, plan });
        }
    }
    check_input(&data)?;
    if let Some(p) = &a.baseline {
        check_input(p)?;
    }
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let baseline = match &a.baseline {
        Some(p) => read_baseline(p, kernel)?,
        None => Vec::new(),
    };

    let traj = load_trajectory(&data)?;
    let len = traj.len();
    let train_end = (len as f64 * TRAIN_SHARE).floor() as usize;
    let test_start = len - (len as f64 * TEST_SHARE).floor() as usize;
    let max_h = *horizons.iter().max().expect("non-empty");
    if train_end <= lag || len - test_start <= max_h * lag + 1 {
        return Err(CliError::data(format!("trajectory of {len} states is too short for this split")));
    }
    let train = build_pairs(&traj.segment(0, train_end)?, lag)?;
    let test_traj = traj.segment(test_start, len)?;
    let test = build_pairs(&test_traj, lag)?;
    if let Some(n) = sizes.iter().find(|&&n| n > train.len()) {
        return Err(CliError::data(format!(
            "insufficient data: n = {n} requested but the training block has {} pairs",
            train.len()
        )));
    }

    let mut records = Vec::new();
    for cell in &cells {
        let pairs = train.head(cell.n)?;
        let mut exact_record: Option<BenchmarkRecord> = None;
        for &seed in &seeds {
            if let Some(rec) = &exact_record {
                records.push(BenchmarkRecord { seed, ..rec.clone() });
                continue;
            }
            let plan = FitPlan { seed, ..cell.plan.clone() };
            let rec = run_cell(&plan, cell.kind, &pairs, &test, &test_traj, lag, &horizons, kernel, seed)?;
            eprintln!(
                "{} n={} seed={}: fit {:.3}s, nrmse_h{} {:.4}",
                cell.kind, cell.n, seed, rec.fit_time, horizons[0], rec.metrics[&format!("nrmse_h{}", horizons[0])]
            );
            if cell.kind.is_exact() {
                exact_record = Some(rec.clone());
            }
            records.push(rec);
        }
    }
    records.extend(baseline);
    write_records(&records, output(a.out.as_deref())?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    plan: &FitPlan,
    kind: EstimatorKind,
    pairs: &LaggedPairs,
    test: &LaggedPairs,
    test_traj: &TrajectoryDataset,
    lag: usize,
    horizons: &[usize],
    kernel: KernelSpec,
    seed: u64,
) -> CliResult<BenchmarkRecord> {
    let (est, fit_time) = time_fit(|| plan.fit(pairs))?;
    let start = Instant::now();
    est.predict(test.x())?;
    let predict_time = start.elapsed().as_secs_f64();
    let train_risk = empirical_risk(&est, pairs.x(), pairs.y())?;
    let mut metrics = BTreeMap::new();
    metrics.insert("test_risk".to_string(), empirical_risk(&est, test.x(), test.y())?);
    for &h in horizons {
        let (first, all) = rollout_errors(&est, test_traj, lag, h)?;
        metrics.insert(format!("nrmse_h{h}"), first);
        metrics.insert(format!("nrmse_all_h{h}"), all);
    }
    Ok(BenchmarkRecord {
        estimator: kind.name().to_string(),
        n: pairs.len(),
        m: est.n_centers(),
        r: est.rank,
        lambda: plan.lambda.unwrap_or(0.0),
        kernel,
        seed,
        fit_time,
        predict_time,
        train_risk,
        metrics,
    })
}

/// External results: `estimator` and `n` columns are required; `seed`, `m`,
/// `r`, `fit_time`, `predict_time` and `train_risk` are picked up when present
/// and every other column becomes a metric.
fn read_baseline(path: &std::path::Path, kernel: KernelSpec) -> CliResult<Vec<BenchmarkRecord>> {
    let bad = |msg: String| CliError::data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    for required in ["estimator", "n"] {
        if !headers.iter().any(|h| h == required) {
            return Err(bad(format!("missing column '{required}'")));
        }
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let mut rec = BenchmarkRecord {
            estimator: String::new(),
            n: 0,
            m: 0,
            r: 0,
            lambda: 0.0,
            kernel,
            seed: 0,
            fit_time: 0.0,
            predict_time: 0.0,
            train_risk: 0.0,
            metrics: BTreeMap::new(),
        };
        for (h, v) in headers.iter().zip(row.iter()) {
            let num = || v.trim().parse::<f64>().map_err(|_| bad(format!("row {}: '{v}' in column {h} is not a number", line + 2)));
            let int = || v.trim().parse::<u64>().map_err(|_| bad(format!("row {}: '{v}' in column {h} is not an integer", line + 2)));
            match h.as_str() {
                "estimator" => rec.estimator = format!("baseline:{}", v.trim()),
                "n" => rec.n = int()? as usize,
                "m" => rec.m = int()? as usize,
                "r" => rec.r = int()? as usize,
                "seed" => rec.seed = int()?,
                "fit_time" => rec.fit_time = num()?,
                "predict_time" => rec.predict_time = num()?,
                "train_risk" => rec.train_risk = num()?,
                other => {
                    rec.metrics.insert(other.to_string(), num()?);
                }
            }
        }
        rec.validate().map_err(|e| bad(format!("row {}: {e}", line + 2)))?;
        out.push(rec);
    }
    Ok(out)
}
