use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use faer::Mat;
use serde_json::json;

use nyskoop::data::io::{read_trajectory, write_trajectory};
use nyskoop::data::{build_pairs, sample_centers, LaggedPairs, TrajectoryDataset};
use nyskoop::dynamics::{lorenz_initial_condition, simulate, SystemSpec};
use nyskoop::estimators::{
    empirical_risk, fit_exact_krr, fit_exact_pcr, fit_exact_rrr, fit_nys_krr, fit_nys_pcr, fit_nys_rrr, read_model,
    write_model, EstimatorKind, ExactOptions, FittedEstimator,
};
use nyskoop::kernels::KernelSpec;
use nyskoop::spectral::{
    decompose, kmd_forecast, modes as koopman_modes, spectrum_entries, write_eigenfunctions_csv, write_spectrum_json,
    Side,
};

use crate::config::{check_input, check_output, parse_list, parse_matrix, require};
use crate::error::{CliError, CliResult};
use crate::{FitArgs, ForecastArgs, ForecastMode, GenerateArgs, ModesArgs, SideArg, SpectrumArgs, SystemKind};

pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const DEFAULT_MAX_N: usize = 5000;

/// Opens `path` for writing, or stdout when absent.
pub fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::data(format!("cannot write {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn load_trajectory(path: &Path) -> CliResult<TrajectoryDataset> {
    read_trajectory(path).map_err(|e| match e {
        nyskoop::Error::Io(io) => CliError::data(format!("{}: {io}", path.display())),
        other => CliError::data(format!("{}: {other}", path.display())),
    })
}

pub fn load_model(path: &Path) -> CliResult<FittedEstimator> {
    check_input(path)?;
    let file = File::open(path)?;
    read_model(BufReader::new(file)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn reject(present: bool, flag: &str, context: &str) -> CliResult<()> {
    if present {
        Err(CliError::usage(format!("--{flag} does not apply to {context}")))
    } else {
        Ok(())
    }
}

pub fn generate(a: GenerateArgs) -> CliResult<()> {
    let system = require(a.system, "system")?;
    let out = require(a.out.clone(), "out")?;
    let steps = a.steps.unwrap_or(10_000);
    let seed = a.seed.unwrap_or(0);
    let x0 = a.x0.as_deref().map(|s| parse_list::<f64>(s, "x0")).transpose()?;
    let traj = match system {
        SystemKind::Lorenz63 => {
            for (flag, set) in [("a", a.a.is_some()), ("std", a.std.is_some()), ("matrix", a.matrix.is_some())] {
                reject(set, flag, "lorenz63")?;
            }
            reject(a.noise_cov.is_some(), "noise-cov", "lorenz63")?;
            let dt = a.dt.unwrap_or(0.01);
            let sub = a.subsample.unwrap_or(1);
            let transient = a.transient.unwrap_or(0);
            if sub == 0 {
                return Err(CliError::usage("--subsample must be at least 1"));
            }
            if steps < 2 {
                return Err(CliError::usage("--steps must be at least 2"));
            }
            let x0 = x0.unwrap_or_else(|| lorenz_initial_condition(seed).to_vec());
            let spec = SystemSpec::lorenz63(dt);
            spec.validate()?;
            check_output(&out)?;
            let raw = simulate(&spec, &x0, transient + (steps - 1) * sub + 1)?;
            let states = Mat::from_fn(steps, 3, |i, j| raw.states()[(transient + i * sub, j)]);
            TrajectoryDataset::new(states, Some(dt * sub as f64), "lorenz63")?
        }
        SystemKind::Ar1 | SystemKind::LinearGaussian => {
            let name = if system == SystemKind::Ar1 { "ar1" } else { "linear-gaussian" };
            reject(a.dt.is_some(), "dt", name)?;
            reject(a.subsample.is_some(), "subsample", name)?;
            reject(a.transient.is_some(), "transient", name)?;
            let spec = if system == SystemKind::Ar1 {
                reject(a.matrix.is_some(), "matrix", name)?;
                reject(a.noise_cov.is_some(), "noise-cov", name)?;
                SystemSpec::ar1(a.a.unwrap_or(0.9), a.std.unwrap_or(1.0), seed)
            } else {
                reject(a.a.is_some(), "a", name)?;
                reject(a.std.is_some(), "std", name)?;
                let matrix = parse_matrix(&require(a.matrix.clone(), "matrix")?, "matrix")?;
                let d = matrix.len();
                let noise_cov = match &a.noise_cov {
                    Some(text) => parse_matrix(text, "noise-cov")?,
                    None => (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
                };
                SystemSpec::LinearGaussian { a: matrix, noise_cov, seed }
            };
            spec.validate()?;
            let x0 = x0.unwrap_or_else(|| vec![0.0; spec.dim()]);
            check_output(&out)?;
            simulate(&spec, &x0, steps)?
        }
    };
    write_trajectory(&traj, &out).map_err(|e| CliError::data(format!("cannot write {}: {e}", out.display())))?;
    eprintln!("wrote {} states of dimension {} to {}", traj.len(), traj.dim(), out.display());
    Ok(())
}

/// Estimator parameters after validation.
#[derive(Debug, Clone)]
pub struct FitPlan {
    pub kind: EstimatorKind,
    pub kernel: KernelSpec,
    pub m: Option<usize>,
    pub r: Option<usize>,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub shared: bool,
    pub max_n: usize,
}

impl FitPlan {
    /// Checks the flag combination of one estimator kind.
    pub fn new(
        kind: EstimatorKind,
        kernel: KernelSpec,
        m: Option<usize>,
        r: Option<usize>,
        lambda: Option<f64>,
        seed: u64,
        shared: bool,
        max_n: usize,
    ) -> CliResult<Self> {
        let name = kind.name();
        if kind.is_exact() {
            reject(m.is_some(), "m", name)?;
        } else if m.is_none() {
            return Err(CliError::usage(format!("--m is required for {name}")));
        }
        if kind.uses_rank() {
            require(r, "r")?;
        } else {
            reject(r.is_some(), "r", name)?;
        }
        let lambda = if kind.uses_lambda() {
            let l = lambda.unwrap_or(DEFAULT_LAMBDA);
            if !(l > 0.0 && l.is_finite()) {
                return Err(CliError::usage(format!("--lambda must be positive, got {l}")));
            }
            Some(l)
        } else {
            reject(lambda.is_some(), "lambda", name)?;
            None
        };
        Ok(FitPlan { kind, kernel, m, r, lambda, seed, shared, max_n })
    }

    /// Usage checks that depend on the number of training pairs.
    pub fn check_size(&self, n: usize) -> CliResult<()> {
        if self.kind.is_exact() && n > self.max_n {
            return Err(CliError::usage(format!(
                "{} with n = {n} exceeds --max-n {}; raise it or use a Nystrom estimator",
                self.kind, self.max_n
            )));
        }
        let centers = self.m.unwrap_or(n);
        if centers > n {
            return Err(CliError::usage(format!("--m {centers} exceeds the {n} training pairs")));
        }
        if let Some(r) = self.r {
            if r == 0 || r > centers {
                return Err(CliError::usage(format!("--r must be in 1..={centers}, got {r}")));
            }
        }
        Ok(())
    }

    pub fn fit(&self, pairs: &LaggedPairs) -> nyskoop::Result<FittedEstimator> {
        let opts = ExactOptions { max_n: self.max_n };
        let lambda = self.lambda.unwrap_or(0.0);
        let r = self.r.unwrap_or(0);
        if self.kind.is_exact() {
            return match self.kind {
                EstimatorKind::ExactKrr => fit_exact_krr(pairs, self.kernel, lambda, &opts),
                EstimatorKind::ExactPcr => fit_exact_pcr(pairs, self.kernel, r, &opts),
                _ => fit_exact_rrr(pairs, self.kernel, lambda, r, &opts),
            };
        }
        let centers = sample_centers(pairs, self.kernel, self.m.unwrap_or(0), self.seed, self.shared)?;
        match self.kind {
            EstimatorKind::NysKrr => fit_nys_krr(pairs, &centers, lambda),
            EstimatorKind::NysPcr => fit_nys_pcr(pairs, &centers, r),
            _ => fit_nys_rrr(pairs, &centers, lambda, r),
        }
    }
}

fn matrix_json(a: &Mat<f64>) -> serde_json::Value {
    json!((0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

pub fn fit(a: FitArgs) -> CliResult<()> {
    let data = require(a.data.clone(), "data")?;
    let kind = require(a.estimator, "estimator")?;
    let kernel = a.kernel.spec()?;
    let lag = a.lag.unwrap_or(1);
    let fraction = a.train_fraction.unwrap_or(1.0);
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::usage(format!("--train-fraction must be in (0, 1], got {fraction}")));
    }
    let plan = FitPlan::new(
        kind,
        kernel,
        a.m,
        a.r,
        a.lambda,
        a.seed.unwrap_or(0),
        a.shared_centers.unwrap_or(false),
        a.max_n.unwrap_or(DEFAULT_MAX_N),
    )?;
    check_input(&data)?;
    for p in [&a.out, &a.report].into_iter().flatten() {
        check_output(p)?;
    }

    let traj = load_trajectory(&data)?;
    let all = build_pairs(&traj, lag).map_err(|e| CliError::data(e.to_string()))?;
    let n = ((all.len() as f64 * fraction).floor() as usize).max(1);
    let pairs = all.head(n)?;
    plan.check_size(n)?;

    let start = Instant::now();
    let est = plan.fit(&pairs)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let train_risk = empirical_risk(&est, pairs.x(), pairs.y())?;
    let effective_rank = est.effective_rank()?;

    if let Some(out) = &a.out {
        let file = File::create(out).map_err(|e| CliError::data(format!("cannot write {}: {e}", out.display())))?;
        write_model(&est, BufWriter::new(file))?;
    }
    let mut report = json!({
        "estimator": kind.name(),
        "kernel": kernel,
        "n": n,
        "m": est.n_centers(),
        "r": est.rank,
        "lambda": plan.lambda,
        "lag": lag,
        "train_risk": train_risk,
        "fit_seconds": fit_seconds,
        "effective_rank": effective_rank,
    });
    if a.dump_w.unwrap_or(false) {
        report["w"] = matrix_json(&est.w());
    }
    let mut w = output(a.report.as_deref())?;
    writeln!(w, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
    w.flush()?;
    Ok(())
}

pub fn spectrum(a: SpectrumArgs) -> CliResult<()> {
    let model = require(a.model.clone(), "model")?;
    let lag = a.lag.unwrap_or(1);
    let dt = a.dt.unwrap_or(1.0);
    if lag == 0 || !(dt > 0.0 && dt.is_finite()) {
        return Err(CliError::usage("--lag and --dt must be positive"));
    }
    if a.eigenfunctions.is_some() != a.points.is_some() {
        return Err(CliError::usage("--eigenfunctions and --points must be given together"));
    }
    reject(a.side.is_some() && a.eigenfunctions.is_none(), "side", "a spectrum without --eigenfunctions")?;
    if let Some(p) = &a.points {
        check_input(p)?;
    }
    for p in [&a.out, &a.eigenfunctions].into_iter().flatten() {
        check_output(p)?;
    }
    let est = load_model(&model)?;
    let dec = decompose(&est)?;
    for msg in &dec.warnings {
        eprintln!("warning: {msg}");
    }
    let entries = spectrum_entries(&dec, lag as f64 * dt);
    write_spectrum_json(&entries, output(a.out.as_deref())?)?;
    if let (Some(points), Some(path)) = (&a.points, &a.eigenfunctions) {
        let pts = load_trajectory(points)?;
        let side = match a.side.unwrap_or(SideArg::Left) {
            SideArg::Left => Side::Left,
            SideArg::Right => Side::Right,
        };
        let values = dec.eval_eigenfunctions(pts.states(), side).map_err(CliError::from)?;
        write_eigenfunctions_csv(pts.states(), values.as_ref(), output(Some(path))?)?;
    }
    Ok(())
}

pub fn modes(a: ModesArgs) -> CliResult<()> {
    let model = require(a.model.clone(), "model")?;
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let est = load_model(&model)?;
    let dec = decompose(&est)?;
    for msg in &dec.warnings {
        eprintln!("warning: {msg}");
    }
    let set = koopman_modes(&dec, est.y_centers())?;
    let d = est.dim();
    let mut w = output(a.out.as_deref())?;
    let mut header = vec!["index".to_string(), "re".into(), "im".into(), "modulus".into()];
    for j in 0..d {
        header.push(format!("mode_re_{j}"));
        header.push(format!("mode_im_{j}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, lam) in dec.eigenvalues.iter().enumerate() {
        let mut row = vec![i.to_string(), lam.re.to_string(), lam.im.to_string(), lam.norm().to_string()];
        for j in 0..d {
            row.push(set.modes[(i, j)].re.to_string());
            row.push(set.modes[(i, j)].im.to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_forecast_rows(w: &mut dyn Write, step: usize, values: &Mat<f64>) -> io::Result<()> {
    for i in 0..values.nrows() {
        let mut row = vec![step.to_string(), i.to_string()];
        row.extend((0..values.ncols()).map(|j| values[(i, j)].to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn forecast(a: ForecastArgs) -> CliResult<()> {
    let model = require(a.model.clone(), "model")?;
    let data = require(a.data.clone(), "data")?;
    let horizon = a.horizon.unwrap_or(1);
    if horizon <= 0 {
        return Err(CliError::usage(format!("--horizon must be at least 1, got {horizon}")));
    }
    let horizon = horizon as usize;
    let mode = a.mode.unwrap_or(ForecastMode::Onestep);
    check_input(&data)?;
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let est = load_model(&model)?;
    let start = load_trajectory(&data)?;
    if start.dim() != est.dim() {
        return Err(CliError::data(format!(
            "model expects states of dimension {}, {} has dimension {}",
            est.dim(),
            data.display(),
            start.dim()
        )));
    }
    let mut w = output(a.out.as_deref())?;
    let header: Vec<String> =
        ["step".to_string(), "index".to_string()].into_iter().chain((0..est.dim()).map(|j| format!("x{j}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    match mode {
        ForecastMode::Onestep => {
            let mut x = start.states().to_owned();
            for step in 1..=horizon {
                x = est.predict(x.as_ref())?;
                write_forecast_rows(&mut *w, step, &x)?;
            }
        }
        ForecastMode::Kmd => {
            let dec = decompose(&est)?;
            let set = koopman_modes(&dec, est.y_centers())?;
            let mut warned = dec.warnings.clone();
            for step in 1..=horizon {
                let out = kmd_forecast(&dec, &set, start.states(), step)?;
                for msg in out.warnings.iter() {
                    if !warned.contains(msg) {
                        warned.push(msg.clone());
                    }
                }
                write_forecast_rows(&mut *w, step, &out.real_part())?;
            }
            for msg in &warned {
                eprintln!("warning: {msg}");
            }
        }
    }
    w.flush()?;
    Ok(())
}
