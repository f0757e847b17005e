//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails at the end if any criterion failed.

use std::time::Instant;

use faer::{c64, Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use nyskoop::data::{build_pairs, sample_centers, LaggedPairs, NystromCenters, TrajectoryDataset};
use nyskoop::dynamics::{ar1_truth, lorenz_initial_condition, simulate, SystemSpec};
use nyskoop::estimators::{
    empirical_risk, fit_exact_krr, fit_exact_pcr, fit_exact_rrr, fit_nys_krr, fit_nys_pcr, fit_nys_rrr,
    read_model, regularized_objective, write_model, EstimatorKind, ExactOptions, FittedEstimator,
};
use nyskoop::kernels::KernelSpec;
use nyskoop::metrics::{eigenvalue_error, nrmse, time_fit};
use nyskoop::spectral::{decompose, forecast, kmd_forecast, modes};

const DT: f64 = 0.01;
const STRIDE: usize = 10;
const TRANSIENT: usize = 1000;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

/// Lorenz '63 from a random initial condition in [−10, 10]³, transient dropped,
/// subsampled every `STRIDE` integration steps.
fn lorenz(seed: u64, len: usize) -> TrajectoryDataset {
    let x0 = lorenz_initial_condition(seed);
    let raw = simulate(&SystemSpec::lorenz63(DT), &x0, TRANSIENT + len * STRIDE).unwrap();
    let rows: Vec<Vec<f64>> = (0..len).map(|i| raw.state(TRANSIENT + i * STRIDE)).collect();
    TrajectoryDataset::from_rows(&rows, Some(DT * STRIDE as f64), "lorenz63").unwrap()
}

/// AR(1) with `a = 0.9` and unit stationary variance.
fn ar1(seed: u64, len: usize) -> TrajectoryDataset {
    let a: f64 = 0.9;
    simulate(&SystemSpec::ar1(a, (1.0 - a * a).sqrt(), seed), &[0.0], len).unwrap()
}

fn rel_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    (a - b).norm_l2() / b.norm_l2()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn first_column(a: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), 1, |i, _| a[(i, 0)])
}

/// Fits whose numeric rank of `W` is checked against their requested rank.
#[derive(Default)]
struct RankLog(Vec<(EstimatorKind, usize, usize)>);

impl RankLog {
    fn record(&mut self, est: &FittedEstimator) {
        if est.kind.uses_rank() {
            self.0.push((est.kind, est.rank, est.effective_rank().unwrap()));
        }
    }
}

fn a1_oracle_equivalence(log: &mut RankLog) -> Outcome {
    let start = Instant::now();
    let kernel = KernelSpec::rbf(2.0).unwrap();
    let (lambda, r) = (1e-4, 10);
    let opts = ExactOptions::default();
    let mut worst_forecast = 0.0_f64;
    let mut worst_risk = 0.0_f64;
    for &n in &[50usize, 200] {
        for seed in 0..3u64 {
            let traj = lorenz(100 + seed, n + 1 + 50);
            let train = traj.segment(0, n + 1).unwrap();
            let query = traj.segment(n + 1, traj.len()).unwrap();
            let pairs = build_pairs(&train, 1).unwrap();
            let centers = NystromCenters::all(&pairs, kernel).unwrap();
            let fits = [
                (fit_nys_krr(&pairs, &centers, lambda), fit_exact_krr(&pairs, kernel, lambda, &opts)),
                (fit_nys_pcr(&pairs, &centers, r), fit_exact_pcr(&pairs, kernel, r, &opts)),
                (fit_nys_rrr(&pairs, &centers, lambda, r), fit_exact_rrr(&pairs, kernel, lambda, r, &opts)),
            ];
            for (nys, exact) in fits {
                let (nys, exact) = (nys.unwrap(), exact.unwrap());
                let fa = nys.predict(query.states()).unwrap();
                let fb = exact.predict(query.states()).unwrap();
                worst_forecast = worst_forecast.max(rel_diff(fa.as_ref(), fb.as_ref()));
                let ra = empirical_risk(&nys, pairs.x(), pairs.y()).unwrap();
                let rb = empirical_risk(&exact, pairs.x(), pairs.y()).unwrap();
                worst_risk = worst_risk.max((ra - rb).abs() / rb);
                log.record(&nys);
                log.record(&exact);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: "A1",
        pass: worst_forecast <= 1e-6 && worst_risk <= 1e-6 && secs < 10.0,
        detail: format!(
            "oracle equivalence: max rel forecast diff {worst_forecast:.2e}, max rel risk diff {worst_risk:.2e} (tol 1e-6), {secs:.1}s (limit 10s)"
        ),
    }
}

fn a2_scalar_closed_form() -> Outcome {
    let traj = TrajectoryDataset::from_rows(&[vec![0.3], vec![0.3]], None, "scalar").unwrap();
    let pairs = build_pairs(&traj, 1).unwrap();
    let kernel = KernelSpec::rbf(1.0).unwrap();
    let centers = NystromCenters::all(&pairs, kernel).unwrap();
    let mut worst_w = 0.0_f64;
    let mut worst_ev = 0.0_f64;
    let mut count_ok = true;
    for &lambda in &[0.1, 1.0, 10.0] {
        let truth = 1.0 / (1.0 + lambda);
        for est in [
            fit_nys_krr(&pairs, &centers, lambda).unwrap(),
            fit_exact_krr(&pairs, kernel, lambda, &ExactOptions::default()).unwrap(),
        ] {
            worst_w = worst_w.max((est.w()[(0, 0)] - truth).abs());
            let dec = decompose(&est).unwrap();
            count_ok &= dec.len() == 1;
            worst_ev = worst_ev.max((dec.eigenvalues[0] - c64::new(truth, 0.0)).norm());
        }
    }
    Outcome {
        id: "A2",
        pass: count_ok && worst_w <= 1e-15 && worst_ev <= 1e-15,
        detail: format!("scalar closed form: max |W − 1/(1+λ)| {worst_w:.1e}, max eigenvalue error {worst_ev:.1e}"),
    }
}

fn a3_normalization(log: &mut RankLog) -> Outcome {
    let kernel = KernelSpec::rbf(3.5).unwrap();
    let mut worst_norm = 0.0_f64;
    let mut worst_bi = 0.0_f64;
    let mut checked_pairs = 0usize;
    for i in 0..20u64 {
        let m = [20, 100][(i % 2) as usize];
        let r = [3, 10][((i / 2) % 2) as usize];
        let traj = lorenz(300 + i, 1001);
        let pairs = build_pairs(&traj, 1).unwrap();
        let centers = sample_centers(&pairs, kernel, m, i, i % 3 != 0).unwrap();
        let est = if (i / 4) % 2 == 0 {
            fit_nys_pcr(&pairs, &centers, r).unwrap()
        } else {
            fit_nys_rrr(&pairs, &centers, 1e-5, r).unwrap()
        };
        log.record(&est);
        let dec = decompose(&est).unwrap();
        for v in dec.right_norms().unwrap() {
            worst_norm = worst_norm.max((v - 1.0).abs());
        }
        let b = dec.biorthogonality().unwrap();
        for p in 0..dec.len() {
            for q in 0..dec.len() {
                let gap = (dec.eigenvalues[p] - dec.eigenvalues[q]).norm();
                if p != q && !dec.flagged[p] && gap > 1e-6 {
                    worst_bi = worst_bi.max(b[(p, q)].norm());
                    checked_pairs += 1;
                }
            }
        }
    }
    Outcome {
        id: "A3",
        pass: worst_norm <= 1e-8 && worst_bi <= 1e-6,
        detail: format!(
            "normalization: max |<ψ,ψ>−1| {worst_norm:.2e} (tol 1e-8), max off-diagonal biorthogonality {worst_bi:.2e} (tol 1e-6) over {checked_pairs} pairs, 20 fits"
        ),
    }
}

fn a4_rank_bound(log: &RankLog) -> Outcome {
    let violations: Vec<_> = log.0.iter().filter(|(_, r, eff)| eff > r).collect();
    Outcome {
        id: "A4",
        pass: violations.is_empty() && !log.0.is_empty(),
        detail: format!("rank bound: {} PCR/RRR fits checked, {} with numeric rank(W) > r", log.0.len(), violations.len()),
    }
}

fn random_factor(rng: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn a5_rrr_optimality(log: &mut RankLog) -> Outcome {
    let kernel = KernelSpec::rbf(3.5).unwrap();
    let (lambda, r, n) = (1e-3, 5, 100);
    let mut beaten = 0usize;
    let mut total = 0usize;
    let mut min_margin = f64::INFINITY;
    for inst in 0..5u64 {
        let traj = lorenz(500 + inst, n + 1);
        let pairs = build_pairs(&traj, 1).unwrap();
        let best = fit_exact_rrr(&pairs, kernel, lambda, r, &ExactOptions::default()).unwrap();
        log.record(&best);
        let obj = regularized_objective(&best, pairs.x(), pairs.y(), lambda).unwrap();
        let u = best.u().to_owned();
        let v = best.v().unwrap().to_owned();
        let mut rng = ChaCha20Rng::seed_from_u64(inst);
        for k in 0..100 {
            let (cu, cv) = if k < 50 {
                // unrelated rank-r operators at the optimum's scale
                (
                    random_factor(&mut rng, n, r, u.norm_l2() / ((n * r) as f64).sqrt()),
                    random_factor(&mut rng, n, r, v.norm_l2() / ((n * r) as f64).sqrt()),
                )
            } else {
                // local perturbations of the optimum, relative size 1e-3 .. 1e-1
                let eps = 10f64.powf(-3.0 + 2.0 * (k - 50) as f64 / 49.0);
                let du = random_factor(&mut rng, n, r, eps * u.norm_l2() / ((n * r) as f64).sqrt());
                let dv = random_factor(&mut rng, n, r, eps * v.norm_l2() / ((n * r) as f64).sqrt());
                (&u + &du, &v + &dv)
            };
            let comp = FittedEstimator::new(
                EstimatorKind::ExactRrr,
                kernel,
                lambda,
                r,
                pairs.x().to_owned(),
                pairs.y().to_owned(),
                cu,
                Some(cv),
            )
            .unwrap();
            let c = regularized_objective(&comp, pairs.x(), pairs.y(), lambda).unwrap();
            total += 1;
            if obj < c {
                beaten += 1;
            }
            min_margin = min_margin.min((c - obj) / obj);
        }
    }
    Outcome {
        id: "A5",
        pass: beaten == total,
        detail: format!(
            "RRR optimality: exact RRR objective beat {beaten}/{total} rank-{r} competitors, smallest relative margin {min_margin:.2e}"
        ),
    }
}

fn a6_ar1_spectrum(log: &mut RankLog) -> Outcome {
    let start = Instant::now();
    let kernel = KernelSpec::rbf(1.0).unwrap();
    let truth = [c64::new(ar1_truth(0.9, 1), 0.0), c64::new(ar1_truth(0.9, 2), 0.0)];
    let mut errors = Vec::new();
    for seed in 0..10u64 {
        let traj = ar1(1000 + seed, 5001);
        let pairs = build_pairs(&traj, 1).unwrap();
        let centers = sample_centers(&pairs, kernel, 100, seed, false).unwrap();
        let est = fit_nys_rrr(&pairs, &centers, 1e-6, 4).unwrap();
        log.record(&est);
        let dec = decompose(&est).unwrap();
        errors.push(eigenvalue_error(&dec.eigenvalues, &truth));
    }
    let secs = start.elapsed().as_secs_f64();
    let good = errors.iter().filter(|&&e| e <= 0.08).count();
    Outcome {
        id: "A6",
        pass: good >= 9 && secs < 30.0,
        detail: format!(
            "AR(1) spectrum: {good}/10 seeds with eigenvalue error ≤ 0.08 (need 9), errors {:?}, {secs:.1}s (limit 30s)",
            errors.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>()
        ),
    }
}

/// One-step nRMSE of the first coordinate on the test block.
fn lorenz_nrmse(est: &FittedEstimator, test: &LaggedPairs) -> f64 {
    let pred = est.predict(test.x()).unwrap();
    nrmse(first_column(pred.as_ref()).as_ref(), first_column(test.y()).as_ref()).unwrap()
}

fn a7_scaling(log: &mut RankLog) -> Outcome {
    let start = Instant::now();
    let kernel = KernelSpec::rbf(3.5).unwrap();
    let (m, r) = (250, 25);
    let n_max = 10_000;
    let traj = lorenz(700, n_max + 1 + 2000);
    let all = build_pairs(&traj, 1).unwrap();
    let test = all.slice(n_max, all.len()).unwrap();

    let nys_time = |n: usize| {
        let pairs = all.head(n).unwrap();
        time_fit(|| {
            let centers = sample_centers(&pairs, kernel, m, 0, false)?;
            fit_nys_pcr(&pairs, &centers, r)
        })
        .unwrap()
    };
    let exact_time = |n: usize| {
        let pairs = all.head(n).unwrap();
        time_fit(|| fit_exact_pcr(&pairs, kernel, r, &ExactOptions::default())).unwrap()
    };
    let (nys_small, t_nys_1000) = nys_time(1000);
    let (_, t_nys_8000) = nys_time(8000);
    let (_, t_ex_500) = exact_time(500);
    let (_, t_ex_2000) = exact_time(2000);
    log.record(&nys_small);
    let nys_ratio = t_nys_8000 / t_nys_1000;
    let exact_ratio = t_ex_2000 / t_ex_500;

    let train = all.head(n_max).unwrap();
    let centers = sample_centers(&train, kernel, m, 0, false).unwrap();
    let nys = fit_nys_pcr(&train, &centers, r).unwrap();
    log.record(&nys);
    let exact = fit_exact_pcr(&train, kernel, r, &ExactOptions { max_n: n_max }).unwrap();
    let e_nys = lorenz_nrmse(&nys, &test);
    let e_exact = lorenz_nrmse(&exact, &test);
    let gap = (e_nys - e_exact).abs();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: "A7",
        pass: nys_ratio <= 16.0 && exact_ratio >= 20.0 && gap <= 0.05 && secs < 600.0,
        detail: format!(
            "scaling: Nyström t(8000)/t(1000) = {nys_ratio:.2} (≤ 16), exact t(2000)/t(500) = {exact_ratio:.1} (≥ 20), nRMSE NysPCR {e_nys:.4} vs ExactPCR {e_exact:.4} at n=10000, gap {gap:.4} (≤ 0.05), {secs:.0}s (limit 600s)"
        ),
    }
}

fn a8_rate_trend() -> Outcome {
    let kernel = KernelSpec::rbf(1.0).unwrap();
    let sizes = [500usize, 2000, 8000];
    let mut medians = Vec::new();
    for &n in &sizes {
        let m = (2.0 * (n as f64).sqrt()).ceil() as usize;
        let lambda = 1e-2 / (n as f64).sqrt();
        let mut risks = Vec::new();
        for seed in 0..10u64 {
            let traj = ar1(2000 + seed, 8001 + 4000);
            let all = build_pairs(&traj, 1).unwrap();
            let train = all.head(n).unwrap();
            let test = all.slice(8000, all.len()).unwrap();
            let centers = sample_centers(&train, kernel, m, seed, false).unwrap();
            let est = fit_nys_krr(&train, &centers, lambda).unwrap();
            risks.push(empirical_risk(&est, test.x(), test.y()).unwrap());
        }
        medians.push(median(risks));
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        id: "A8",
        pass: decreasing,
        detail: format!(
            "rate trend: median held-out risk at n = 500/2000/8000: {:?} (strictly decreasing required)",
            medians.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>()
        ),
    }
}

fn a9_kmd_consistency() -> Outcome {
    let kernel = KernelSpec::rbf(3.5).unwrap();
    let mut worst = 0.0_f64;
    let mut worst_residue = 0.0_f64;
    let mut bit_exact = true;
    for seed in 0..10u64 {
        let traj = lorenz(900 + seed, 400);
        let train = traj.segment(0, 301).unwrap();
        let query = traj.segment(301, traj.len()).unwrap();
        let pairs = build_pairs(&train, 1).unwrap();
        let m = 10 + 3 * seed as usize;
        let centers = sample_centers(&pairs, kernel, m, seed, seed % 2 == 0).unwrap();
        let est = match seed % 3 {
            0 => fit_nys_krr(&pairs, &centers, 1e-3).unwrap(),
            1 => fit_nys_pcr(&pairs, &centers, m).or_else(|e| match e {
                nyskoop::Error::RankDeficient { achievable, .. } => fit_nys_pcr(&pairs, &centers, achievable),
                other => Err(other),
            }).unwrap(),
            _ => fit_nys_rrr(&pairs, &centers, 1e-3, m).or_else(|e| match e {
                nyskoop::Error::RankDeficient { achievable, .. } => fit_nys_rrr(&pairs, &centers, 1e-3, achievable),
                other => Err(other),
            }).unwrap(),
        };
        let dec = decompose(&est).unwrap();
        let g_m = est.y_centers().to_owned();
        let set = modes(&dec, g_m.as_ref()).unwrap();
        let kmd = kmd_forecast(&dec, &set, query.states(), 1).unwrap();
        let direct = forecast(&est, g_m.as_ref(), query.states()).unwrap();
        worst = worst.max(rel_diff(kmd.real_part().as_ref(), direct.as_ref()));
        worst_residue = worst_residue.max(kmd.imag_residue);

        let mut buf = Vec::new();
        write_model(&est, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        bit_exact &= back == est && again == buf;
        bit_exact &= back.predict(query.states()).unwrap() == est.predict(query.states()).unwrap();
    }
    Outcome {
        id: "A9",
        pass: worst <= 1e-6 && bit_exact,
        detail: format!(
            "KMD consistency: max rel |kmd(t=1) − forecast| {worst:.2e} (tol 1e-6), max imaginary residue {worst_residue:.1e}, serialization bit-exact: {bit_exact}"
        ),
    }
}

fn main() {
    let mut log = RankLog::default();
    let mut outcomes = vec![
        a1_oracle_equivalence(&mut log),
        a2_scalar_closed_form(),
        a3_normalization(&mut log),
        a5_rrr_optimality(&mut log),
        a6_ar1_spectrum(&mut log),
        a7_scaling(&mut log),
        a8_rate_trend(),
        a9_kmd_consistency(),
    ];
    outcomes.push(a4_rank_bound(&log));
    outcomes.sort_by_key(|o| o.id);
    for o in &outcomes {
        println!("{} {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
