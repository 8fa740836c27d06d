//! Error metrics, shared-noise prediction and the rate studies.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{input, Result};
use crate::estimator::{estimate, DimensionChoice, Estimate, EstimatedKernel, NormalSystem};
use crate::hypospace::PartitionMode;
use crate::io::fmt_f64;
use crate::measure::{reference_rho, rho_norm, EmpiricalMeasure};
use crate::model::{InitialDistribution, InteractionKernel, SystemParams};
use crate::par::mix_seed;
use crate::sim::{simulate, simulate_many, subsample, NoiseStream, Trajectory};

const TAG_RHO: u64 = 1;
const TAG_CONVERGENCE: u64 = 2;
const TAG_GAP: u64 = 3;
const TAG_LONG: u64 = 4;
const TAG_TRAIN: u64 = 5;
const TAG_FRESH: u64 = 6;

/// `|||a - b|||` under `rho`.
pub fn kernel_distance(a: &InteractionKernel, b: &InteractionKernel, rho: &EmpiricalMeasure) -> f64 {
    rho_norm(|r| a.value(r) - b.value(r), rho)
}

/// `|||phi_hat - phi|||` for the raw piecewise-polynomial estimator.
pub fn kernel_error(est: &EstimatedKernel, truth: &InteractionKernel, rho: &EmpiricalMeasure) -> f64 {
    kernel_distance(est.raw(), truth, rho)
}

/// True and estimated paths from the same initial state and Brownian increments.
pub fn predict_pair(
    params: &SystemParams,
    est: &InteractionKernel,
    init: &InitialDistribution,
    horizon: f64,
    dt: f64,
    noise: NoiseStream,
) -> Result<(Trajectory, Trajectory)> {
    let truth = simulate(params, init, horizon, dt, noise)?;
    let hat = simulate(&params.with_kernel(est.clone()), init, horizon, dt, noise)?;
    Ok((truth, hat))
}

/// Root time-average over grid times in `[t_a, t_b]` of `(1/N)|X_t - X_hat_t|^2`.
pub fn traj_error(x: &Trajectory, x_hat: &Trajectory, interval: (f64, f64)) -> Result<f64> {
    if (x.n(), x.d(), x.steps()) != (x_hat.n(), x_hat.d(), x_hat.steps()) || x.dt() != x_hat.dt() {
        return input("trajectories do not share a time grid");
    }
    let (ta, tb) = interval;
    let slack = 1e-9 * x.dt();
    if !(ta <= tb && ta >= -slack && tb <= x.horizon() + slack) {
        return input(format!("interval [{ta}, {tb}] outside [0, {}]", x.horizon()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (l, t) in x.times().into_iter().enumerate() {
        if t < ta - slack || t > tb + slack {
            continue;
        }
        let sq: f64 = x.state(l).iter().zip(x_hat.state(l)).map(|(a, b)| (a - b) * (a - b)).sum();
        sum += sq / x.n() as f64;
        count += 1;
    }
    if count == 0 {
        return input(format!("no grid times in [{ta}, {tb}]"));
    }
    Ok((sum / count as f64).sqrt())
}

/// `sup_t (1/N)|X_hat_t - X_t|^2`.
pub fn sup_sq_deviation(x: &Trajectory, x_hat: &Trajectory) -> f64 {
    (0..=x.steps())
        .map(|l| x.state(l).iter().zip(x_hat.state(l)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.n() as f64)
        .fold(0.0, f64::max)
}

/// Stability ceiling `2 T^2 exp(8 T^2 (R+1)^2 S^2) err^2` on the mean squared deviation.
pub fn prediction_bound(horizon: f64, radius: f64, bound: f64, err: f64) -> f64 {
    let t2 = horizon * horizon;
    2.0 * t2 * (8.0 * t2 * (radius + 1.0).powi(2) * bound * bound).exp() * err * err
}

/// Smallest eigenvalue of the normal matrix restricted to its active unknowns.
pub fn coercivity_estimate(system: &NormalSystem) -> f64 {
    let idx: Vec<usize> = (0..system.dim()).filter(|&p| system.active()[p]).collect();
    if idx.is_empty() {
        return 0.0;
    }
    let k = idx.len();
    let sub = DMatrix::from_fn(k, k, |i, j| 0.5 * (system.entry(idx[i], idx[j]) + system.entry(idx[j], idx[i])));
    SymmetricEigen::new(sub).eigenvalues.min()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub x: f64,
    pub mean_error: f64,
    pub std_error: f64,
    /// Number of partition cells.
    pub n: usize,
    pub lambda_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `None` when the fit is degenerate.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub points: Vec<RatePoint>,
}

/// Errors at or below this level are treated as exact recovery.
pub const NEGLIGIBLE_ERROR: f64 = 1e-10;

impl RateFit {
    /// Least-squares line through `(ln x, ln mean_error)` of the points with
    /// `x >= x_min`.
    pub fn fit(points: Vec<RatePoint>, x_min: f64) -> Self {
        let used: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.x >= x_min && p.x > 0.0 && p.mean_error > NEGLIGIBLE_ERROR && p.mean_error.is_finite())
            .map(|p| (p.x.ln(), p.mean_error.ln()))
            .collect();
        let line = ols(&used);
        Self { slope: line.map(|l| l.0), intercept: line.map(|l| l.1), points }
    }

    pub fn is_degenerate(&self) -> bool {
        self.slope.is_none()
    }

    /// CSV `x,mean_error,std_error,n,lambda_min`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,mean_error,std_error,n,lambda_min")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{},{}", fmt_f64(p.x), fmt_f64(p.mean_error), fmt_f64(p.std_error), p.n, fmt_f64(p.lambda_min))?;
        }
        Ok(())
    }
}

/// Slope and intercept; `None` with fewer than three points or no spread in x.
fn ols(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-12 * n {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reference measure over `[0, horizon]` from an independent seed.
pub fn ground_truth_rho(cfg: &ExperimentConfig, params: &SystemParams, horizon: f64, count: usize) -> Result<EmpiricalMeasure> {
    let seed = mix_seed(cfg.seed, &[TAG_RHO, params.sigma.to_bits(), horizon.to_bits()]);
    reference_rho(params, &cfg.init, horizon, cfg.dt, seed, count, cfg.rho_bins)
}

fn point(x: f64, runs: &[(f64, &Estimate)]) -> RatePoint {
    let errors: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let (mean_error, std_error) = mean_std(&errors);
    let lambdas: Vec<f64> = runs.iter().map(|r| r.1.diagnostics.lambda_min).collect();
    RatePoint { x, mean_error, std_error, n: runs[0].1.diagnostics.cells, lambda_min: mean_std(&lambdas).0 }
}

/// Error of the estimator against `M` for each entry of `m_list`, using
/// `replicates` independent datasets per `M`.
pub fn convergence_study(cfg: &ExperimentConfig, m_list: &[usize], replicates: usize, seed: u64) -> Result<RateFit> {
    if m_list.len() < 3 || m_list.windows(2).any(|w| w[0] >= w[1]) {
        return input("convergence study needs at least three increasing sample sizes");
    }
    if replicates == 0 {
        return input("replicates must be at least 1");
    }
    let params = cfg.params()?;
    let rho = ground_truth_rho(cfg, &params, cfg.t, cfg.m_rho)?;
    let mut points = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let mut runs = Vec::with_capacity(replicates);
        for rep in 0..replicates {
            let s = mix_seed(seed, &[TAG_CONVERGENCE, m as u64, rep as u64]);
            let trajs = simulate_many(&params, &cfg.init, cfg.t, cfg.dt, s, 0, m)?;
            let est = estimate(&trajs, &cfg.basis)?;
            runs.push((kernel_error(&est.kernel, &params.kernel, &rho), est));
        }
        let refs: Vec<(f64, &Estimate)> = runs.iter().map(|(e, est)| (*e, est)).collect();
        points.push(point(m as f64, &refs));
    }
    Ok(RateFit::fit(points, 0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapFit {
    pub sigma: f64,
    /// Fit over `Delta t` within a decade of the largest gap.
    pub fit: RateFit,
}

/// Error against the observation gap `Delta t = k dt` for each noise level.
///
/// Each replicate simulates `m` trajectories at `dt` once and estimates from
/// every subsampling in `gap_list`; the partition size is fixed by `m`.
pub fn gap_study(
    cfg: &ExperimentConfig,
    gap_list: &[usize],
    sigma_list: &[f64],
    m: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<GapFit>> {
    let steps = cfg.steps()?;
    if gap_list.is_empty() || replicates == 0 {
        return input("gap study needs at least one gap and one replicate");
    }
    if let Some(g) = gap_list.iter().find(|&&g| g == 0 || steps % g != 0) {
        return input(format!("observation gap {g} does not divide L = {steps}"));
    }
    let max_dt = gap_list.iter().copied().max().unwrap() as f64 * cfg.dt;
    let mut out = Vec::with_capacity(sigma_list.len());
    for (si, &sigma) in sigma_list.iter().enumerate() {
        let params = cfg.params()?.with_sigma(sigma)?;
        let rho = ground_truth_rho(cfg, &params, cfg.t, cfg.m_rho)?;
        let mut errors = vec![Vec::with_capacity(replicates); gap_list.len()];
        for rep in 0..replicates {
            let s = mix_seed(seed, &[TAG_GAP, si as u64, rep as u64]);
            let trajs = simulate_many(&params, &cfg.init, cfg.t, cfg.dt, s, 0, m)?;
            let mut basis = cfg.basis.clone();
            basis.dimension = DimensionChoice::Fixed { cells: cfg.basis.cells_for(&trajs)? };
            for (gi, &gap) in gap_list.iter().enumerate() {
                let observed = trajs.iter().map(|t| subsample(t, gap)).collect::<Result<Vec<_>>>()?;
                let est = estimate(&observed, &basis)?;
                errors[gi].push((kernel_error(&est.kernel, &params.kernel, &rho), est));
            }
        }
        let points = gap_list
            .iter()
            .zip(&errors)
            .map(|(&gap, runs)| {
                let refs: Vec<(f64, &Estimate)> = runs.iter().map(|(e, est)| (*e, est)).collect();
                point(gap as f64 * cfg.dt, &refs)
            })
            .collect();
        out.push(GapFit { sigma, fit: RateFit::fit(points, max_dt / 10.0 * (1.0 - 1e-9)) });
    }
    Ok(out)
}

/// Error against `M T` over a grid of `(M, T)` pairs, with the partition
/// size set by the `M T / dt` rule and constant `c`.
///
/// Every point is scored against one reference measure over the longest
/// horizon, built from `m_rho` trajectories. `mode` overrides the partition.
pub fn long_t_study(
    cfg: &ExperimentConfig,
    grid: &[(usize, f64)],
    c: f64,
    m_rho: usize,
    mode: Option<PartitionMode>,
    replicates: usize,
    seed: u64,
) -> Result<RateFit> {
    if grid.is_empty() || replicates == 0 {
        return input("long-trajectory study needs a grid point and a replicate");
    }
    let params = cfg.params()?;
    let t_max = grid.iter().map(|g| g.1).fold(0.0, f64::max);
    let rho = ground_truth_rho(cfg, &params, t_max, m_rho)?;
    let mut basis = cfg.basis.clone();
    basis.c = c;
    basis.dimension = DimensionChoice::LongTime;
    if let Some(mode) = mode {
        basis.mode = mode;
    }
    let mut points = Vec::with_capacity(grid.len());
    for (k, &(m, t)) in grid.iter().enumerate() {
        let mut runs = Vec::with_capacity(replicates);
        for rep in 0..replicates {
            let s = mix_seed(seed, &[TAG_LONG, k as u64, rep as u64]);
            let trajs = simulate_many(&params, &cfg.init, t, cfg.dt, s, 0, m)?;
            let est = estimate(&trajs, &basis)?;
            runs.push((kernel_error(&est.kernel, &params.kernel, &rho), est));
        }
        let refs: Vec<(f64, &Estimate)> = runs.iter().map(|(e, est)| (*e, est)).collect();
        points.push(point(m as f64 * t, &refs));
    }
    Ok(RateFit::fit(points, 0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalError {
    pub t_a: f64,
    pub t_b: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub trajectories: usize,
    pub kernel_error: f64,
    pub training: Vec<IntervalError>,
    pub random: Vec<IntervalError>,
    /// Largest ratio of observed deviation to the stability ceiling.
    pub bound_ratio: f64,
}

/// Learns from `cfg.m` trajectories on `[0, T]`, then predicts on `[0, T_f]`
/// from `ics` training initial conditions (replaying their noise) and `ics`
/// fresh ones, reporting errors on `[0, T]` and `[T, T_f]`.
pub fn prediction_study(cfg: &ExperimentConfig, ics: usize, seed: u64) -> Result<PredictionReport> {
    if ics == 0 {
        return input("prediction needs at least one initial condition");
    }
    let params = cfg.params()?;
    let train_seed = mix_seed(seed, &[TAG_TRAIN]);
    let trajs = simulate_many(&params, &cfg.init, cfg.t, cfg.dt, train_seed, 0, cfg.m)?;
    let est = estimate(&trajs, &cfg.basis)?;
    drop(trajs);
    let rho = ground_truth_rho(cfg, &params, cfg.t, cfg.m_rho)?;
    let err = kernel_error(&est.kernel, &params.kernel, &rho);
    let hat = est.kernel.smoothed().clone();
    let fresh_seed = mix_seed(seed, &[TAG_FRESH]);
    let intervals = [(0.0, cfg.t), (cfg.t, cfg.t_f)];
    let run = |noise_seed: u64| -> Result<(Vec<IntervalError>, f64)> {
        let per = crate::par::map_indexed(ics, |k| -> Result<(Vec<f64>, f64)> {
            let (x, xh) = predict_pair(&params, &hat, &cfg.init, cfg.t_f, cfg.dt, NoiseStream::new(noise_seed, k as u64))?;
            let errs = intervals.iter().map(|&iv| traj_error(&x, &xh, iv)).collect::<Result<Vec<_>>>()?;
            let ceiling = prediction_bound(cfg.t_f, params.kernel.radius(), params.kernel.bound(), err);
            Ok((errs, sup_sq_deviation(&x, &xh) / ceiling))
        });
        let per = per.into_iter().collect::<Result<Vec<_>>>()?;
        let report = intervals
            .iter()
            .enumerate()
            .map(|(i, &(t_a, t_b))| {
                let (mean, std) = mean_std(&per.iter().map(|p| p.0[i]).collect::<Vec<_>>());
                IntervalError { t_a, t_b, mean, std }
            })
            .collect();
        let ratio = per.iter().map(|p| p.1).fold(0.0, f64::max);
        Ok((report, ratio))
    };
    let (training, r1) = run(train_seed)?;
    let (random, r2) = run(fresh_seed)?;
    Ok(PredictionReport { trajectories: cfg.m, kernel_error: err, training, random, bound_ratio: r1.max(r2) })
}
