//! Empirical distribution of pairwise distances and the error norm it induces.
//!
//! The measure puts equal mass on every pairwise distance `r_ii'(t_l)` with
//! `i < i'`, `l = 0..L-1` (the final state is excluded), across all observed
//! trajectories. Histogram bin midpoints serve as quadrature nodes for the
//! norm `|||f||| = || f(r) r ||_{L^2(rho)}`.

use std::io::Write;

use crate::error::{input, Error, Result};
use crate::io::fmt_f64;
use crate::model::{InitialDistribution, SystemParams};
use crate::par;
use crate::sim::{for_each_distance, simulate, NoiseStream, Trajectory};

pub const DEFAULT_BINS: usize = 1000;

/// Normalized histogram of pairwise distances on `[R_min, R_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    edges: Vec<f64>,
    weights: Vec<f64>,
    counts_total: u64,
}

impl EmpiricalMeasure {
    /// Builds a measure from raw bin counts over `[lo, hi]`.
    pub fn from_counts(lo: f64, hi: f64, counts: &[u64]) -> Result<Self> {
        if counts.is_empty() || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return input(format!("histogram needs at least one bin over a nonempty range, got [{lo}, {hi}]"));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return input("histogram has no samples");
        }
        let b = counts.len();
        let mut edges: Vec<f64> = (0..=b).map(|k| lo + (hi - lo) * k as f64 / b as f64).collect();
        edges[b] = hi;
        let weights = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self { edges, weights, counts_total: total })
    }

    /// Builds a measure directly from (bin midpoint) weights; used for synthetic measures.
    pub fn from_weights(edges: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if edges.len() != weights.len() + 1 || weights.is_empty() {
            return input("need one more edge than weights");
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return input("edges must be finite and strictly increasing");
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return input("weights must be nonnegative");
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return input("weights must have positive total mass");
        }
        let weights = weights.iter().map(|w| w / s).collect();
        Ok(Self { edges, weights, counts_total: 0 })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn counts_total(&self) -> u64 {
        self.counts_total
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lo,bin_hi,weight")?;
        for (e, wt) in self.edges.windows(2).zip(&self.weights) {
            writeln!(w, "{},{},{}", fmt_f64(e[0]), fmt_f64(e[1]), fmt_f64(*wt))?;
        }
        Ok(())
    }
}

/// Bin index of `r` in `bins` equal bins over `[lo, hi]`, last bin right-closed.
#[inline]
fn bin_of(r: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((r - lo) / (hi - lo) * bins as f64).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

pub(crate) fn check_homogeneous(trajs: &[Trajectory]) -> Result<(usize, usize)> {
    let first = trajs.first().ok_or_else(|| Error::Input("no trajectories given".into()))?;
    let (n, d) = (first.n(), first.d());
    if let Some(t) = trajs.iter().find(|t| t.n() != n || t.d() != d) {
        return Err(Error::DataConsistency(format!("trajectories disagree on dimensions: (N={n}, d={d}) vs (N={}, d={})", t.n(), t.d())));
    }
    Ok((n, d))
}

/// Calls `f` on every distance that enters the empirical measure of `traj`.
pub(crate) fn visit_observed(traj: &Trajectory, mut f: impl FnMut(f64)) {
    for l in 0..traj.steps() {
        for_each_distance(traj.state(l), traj.n(), traj.d(), &mut f);
    }
}

/// Number of distances entering the empirical measure of `trajs`.
pub(crate) fn observed_count(trajs: &[Trajectory]) -> u64 {
    trajs.iter().map(|t| (t.steps() * t.n() * (t.n() - 1) / 2) as u64).sum()
}

fn range_of(traj: &Trajectory) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    visit_observed(traj, |r| {
        lo = lo.min(r);
        hi = hi.max(r);
    });
    (lo, hi)
}

fn merge_range(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.min(b.0), a.1.max(b.1))
}

/// Widens a degenerate range so the histogram has positive width.
fn padded(range: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = range;
    if hi > lo {
        (lo, hi)
    } else {
        let pad = (1e-9 * lo.abs()).max(1e-12);
        ((lo - pad).max(0.0), hi + pad)
    }
}

fn histogram(traj: &Trajectory, lo: f64, hi: f64, counts: &mut [u64]) {
    let bins = counts.len();
    visit_observed(traj, |r| counts[bin_of(r, lo, hi, bins)] += 1);
}

/// Empirical pairwise-distance measure of `trajs` with `bins` equal-width bins.
pub fn empirical_rho(trajs: &[Trajectory], bins: usize) -> Result<EmpiricalMeasure> {
    check_homogeneous(trajs)?;
    if bins == 0 {
        return input("number of bins must be positive");
    }
    let range = par::map_indexed(trajs.len(), |m| range_of(&trajs[m])).into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), merge_range);
    empirical_rho_on(trajs, bins, padded(range))
}

/// Histogram of `trajs` on a fixed range; distances outside are clamped to the end bins.
pub fn empirical_rho_on(trajs: &[Trajectory], bins: usize, range: (f64, f64)) -> Result<EmpiricalMeasure> {
    check_homogeneous(trajs)?;
    let (lo, hi) = range;
    let counts = par::map_indexed(trajs.len(), |m| {
        let mut c = vec![0u64; bins];
        histogram(&trajs[m], lo, hi, &mut c);
        c
    })
    .into_iter()
    .fold(vec![0u64; bins], |mut acc, c| {
        acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        acc
    });
    EmpiricalMeasure::from_counts(lo, hi, &counts)
}

/// Large-sample reference measure computed by streaming simulation.
///
/// Trajectories are simulated twice (range scan, then histogram) instead of
/// being stored; streams `0..count` under `seed` are used.
pub fn reference_rho(
    params: &SystemParams,
    init: &InitialDistribution,
    horizon: f64,
    dt: f64,
    seed: u64,
    count: usize,
    bins: usize,
) -> Result<EmpiricalMeasure> {
    const CHUNK: usize = 64;
    if count == 0 || bins == 0 {
        return input("reference measure needs at least one trajectory and one bin");
    }
    let chunks = count.div_ceil(CHUNK);
    let chunk_range = |c: usize| -> Result<(f64, f64)> {
        let mut range = (f64::INFINITY, f64::NEG_INFINITY);
        for m in c * CHUNK..((c + 1) * CHUNK).min(count) {
            let t = simulate(params, init, horizon, dt, NoiseStream::new(seed, m as u64))?;
            range = merge_range(range, range_of(&t));
        }
        Ok(range)
    };
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for r in par::map_indexed(chunks, chunk_range) {
        range = merge_range(range, r?);
    }
    let (lo, hi) = padded(range);
    let chunk_counts = |c: usize| -> Result<Vec<u64>> {
        let mut counts = vec![0u64; bins];
        for m in c * CHUNK..((c + 1) * CHUNK).min(count) {
            let t = simulate(params, init, horizon, dt, NoiseStream::new(seed, m as u64))?;
            histogram(&t, lo, hi, &mut counts);
        }
        Ok(counts)
    };
    let mut counts = vec![0u64; bins];
    for c in par::map_indexed(chunks, chunk_counts) {
        counts.iter_mut().zip(c?).for_each(|(a, b)| *a += b);
    }
    EmpiricalMeasure::from_counts(lo, hi, &counts)
}

/// `sqrt( sum_bins |f(r_c) r_c|^2 w_bin )` over bin midpoints `r_c`.
pub fn rho_norm(f: impl Fn(f64) -> f64, measure: &EmpiricalMeasure) -> f64 {
    measure
        .midpoints()
        .zip(measure.weights())
        .map(|(r, w)| {
            let v = f(r) * r;
            v * v * w
        })
        .sum::<f64>()
        .sqrt()
}

/// Exact per-sample version of [`rho_norm`] over a list of distances.
pub fn rho_norm_samples(f: impl Fn(f64) -> f64, distances: &[f64]) -> f64 {
    let s: f64 = distances.iter().map(|&r| (f(r) * r).powi(2)).sum();
    (s / distances.len() as f64).sqrt()
}

/// Integrated autocorrelation time estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AutocorrTime {
    pub tau: f64,
    /// Set when every distance series was constant.
    pub degenerate: bool,
}

/// Correlation level at which the lag sum is truncated.
pub const AUTOCORR_CUTOFF: f64 = 0.05;

/// Autocorrelation time of the distance between particles 1 and 2.
///
/// `tau = dt (1 + 2 sum_{lag >= 1} c(lag))`, summing the trajectory-averaged
/// normalized autocorrelation up to the first lag where it drops below
/// [`AUTOCORR_CUTOFF`]; never less than `dt`.
pub fn autocorr_time(trajs: &[Trajectory]) -> Result<AutocorrTime> {
    check_homogeneous(trajs)?;
    let dt = trajs[0].dt();
    if trajs.iter().any(|t| t.steps() < 2) {
        return input("autocorrelation needs at least two steps per trajectory");
    }
    let d = trajs[0].d();
    let series: Vec<Vec<f64>> = trajs
        .iter()
        .filter_map(|t| {
            let mut x: Vec<f64> = (0..=t.steps())
                .map(|l| {
                    let s = t.state(l);
                    (0..d).map(|k| (s[d + k] - s[k]).powi(2)).sum::<f64>().sqrt()
                })
                .collect();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            x.iter_mut().for_each(|v| *v -= mean);
            let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            (var > 1e-300 * mean.abs().max(1.0)).then_some(x)
        })
        .collect();
    if series.is_empty() {
        return Ok(AutocorrTime { tau: dt, degenerate: true });
    }
    let variances: Vec<f64> = series.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).collect();
    let max_lag = series.iter().map(|x| x.len()).min().unwrap() - 1;
    let mut sum = 0.0;
    for lag in 1..=max_lag {
        let c: f64 = series
            .iter()
            .zip(&variances)
            .map(|(x, var)| {
                let cov = x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64;
                cov / var
            })
            .sum::<f64>()
            / series.len() as f64;
        if c < AUTOCORR_CUTOFF {
            break;
        }
        sum += c;
    }
    Ok(AutocorrTime { tau: (dt * (1.0 + 2.0 * sum)).max(dt), degenerate: false })
}

/// `N_ess = M T / tau`.
pub fn effective_sample_size(m: f64, horizon: f64, tau: f64) -> f64 {
    m * horizon / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InteractionKernel;
    use crate::sim::{simulate_many, TrajectoryMeta};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn meta() -> TrajectoryMeta {
        TrajectoryMeta { seed: 0, stream: 0, sigma: 0.0, kernel_id: "test".into(), gap: 1 }
    }

    fn fixture(n: usize, d: usize, states: Vec<f64>) -> Trajectory {
        Trajectory::new(n, d, 0.1, states, meta()).unwrap()
    }

    #[test]
    fn constant_distance_goes_to_one_bin() {
        let t = fixture(2, 1, vec![0.0, 1.0, 2.0, 3.0, 5.0, 6.0]);
        let m = empirical_rho(&[t], 4).unwrap();
        let (lo, hi) = m.support();
        assert!(lo <= 1.0 && hi >= 1.0);
        assert_eq!(m.weights().iter().filter(|&&w| w == 1.0).count(), 1);
        assert_eq!(m.counts_total(), 2);
    }

    #[test]
    fn two_distances_split_evenly() {
        // distance 1 at l=0, 3 at l=1; the final state (distance 7) is excluded
        let t = fixture(2, 1, vec![0.0, 1.0, 0.0, 3.0, 0.0, 7.0]);
        let m = empirical_rho(&[t], 2).unwrap();
        assert_eq!(m.support(), (1.0, 3.0));
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_and_mismatched_input() {
        assert!(matches!(empirical_rho(&[], 10), Err(Error::Input(_))));
        let a = fixture(2, 1, vec![0.0; 4]);
        let b = fixture(2, 2, vec![0.0; 8]);
        assert!(matches!(empirical_rho(&[a, b], 10), Err(Error::DataConsistency(_))));
    }

    #[test]
    fn histogram_matches_naive_recount() {
        let p = SystemParams::new(10, 1, 0.1, InteractionKernel::opinion()).unwrap();
        let init = InitialDistribution::UniformBox { lo: 0.0, hi: 8.0 };
        let trajs = simulate_many(&p, &init, 0.5, 0.01, 3, 0, 100).unwrap();
        let m = empirical_rho(&trajs, 37).unwrap();
        let mut all = Vec::new();
        for t in &trajs {
            for l in 0..t.steps() {
                let s = t.state(l);
                for i in 0..10 {
                    for j in i + 1..10 {
                        all.push((s[j] - s[i]).abs());
                    }
                }
            }
        }
        let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(m.support(), (lo, hi));
        let mut counts = vec![0usize; 37];
        for &r in &all {
            let mut k = 0;
            while k + 1 < 37 && r >= m.edges()[k + 1] {
                k += 1;
            }
            counts[k] += 1;
        }
        for (w, c) in m.weights().iter().zip(counts) {
            assert_relative_eq!(*w, c as f64 / all.len() as f64, max_relative = 1e-12);
        }
        let sum: f64 = m.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // trajectory order does not matter
        let mut rev = trajs.clone();
        rev.reverse();
        assert_eq!(empirical_rho(&rev, 37).unwrap(), m);
    }

    #[test]
    fn reference_rho_matches_stored_trajectories() {
        let p = SystemParams::new(4, 2, 0.3, InteractionKernel::opinion()).unwrap();
        let init = InitialDistribution::IsotropicGaussian { mean: 0.0, scale: 1.0 };
        let trajs = simulate_many(&p, &init, 0.2, 0.01, 8, 0, 70).unwrap();
        let a = empirical_rho(&trajs, 50).unwrap();
        let b = reference_rho(&p, &init, 0.2, 0.01, 8, 70, 50).unwrap();
        assert_eq!(a, b);
    }

    fn uniform(bins: usize, lo: f64, hi: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::from_counts(lo, hi, &vec![1; bins]).unwrap()
    }

    #[test]
    fn norm_examples() {
        let m = uniform(1000, 0.0, 1.0);
        assert_eq!(rho_norm(|_| 0.0, &m), 0.0);
        assert!((rho_norm(|r| r, &m) - (0.2f64).sqrt()).abs() < 1e-3);
        let single = EmpiricalMeasure::from_counts(1.0, 3.0, &[5]).unwrap();
        assert_relative_eq!(rho_norm(|_| -1.5, &single), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn norm_is_homogeneous_and_subadditive() {
        let m = uniform(200, 0.1, 4.0);
        let f = |r: f64| (3.0 * r).sin();
        let g = |r: f64| r.cos() - 0.3;
        for c in [-2.5, 0.0, 0.125, 7.0] {
            assert_relative_eq!(rho_norm(|r| c * f(r), &m), c.abs() * rho_norm(f, &m), max_relative = 1e-14);
        }
        assert!(rho_norm(|r| f(r) + g(r), &m) <= rho_norm(f, &m) + rho_norm(g, &m) + 1e-12);
    }

    #[test]
    fn norm_converges_under_refinement() {
        let f = |r: f64| (2.0 * r).sin();
        let v: Vec<f64> = [100, 200, 400].iter().map(|&b| rho_norm(f, &uniform(b, 0.0, 2.0))).collect();
        assert!((v[1] - v[2]).abs() < (v[0] - v[1]).abs() + 1e-6);
        assert!((v[1] - v[2]).abs() < 1e-4);
    }

    #[test]
    fn sample_norm_agrees_with_fine_histogram() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20000).map(|_| rng.random::<f64>() * 3.0).collect();
        let bins = 3000;
        let mut counts = vec![0u64; bins];
        for &x in &xs {
            counts[bin_of(x, 0.0, 3.0, bins)] += 1;
        }
        let m = EmpiricalMeasure::from_counts(0.0, 3.0, &counts).unwrap();
        let f = |r: f64| 1.0 + r;
        assert_relative_eq!(rho_norm(f, &m), rho_norm_samples(f, &xs), max_relative = 1e-3);
    }

    #[test]
    fn csv_export() {
        let m = EmpiricalMeasure::from_counts(0.0, 1.0, &[1, 3]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_lo,bin_hi,weight\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn white_noise_has_unit_autocorrelation_time() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let trajs: Vec<Trajectory> = (0..4)
            .map(|_| {
                let states = (0..2001).flat_map(|_| [0.0, 5.0 + rng.random::<f64>()]).collect();
                fixture(2, 1, states)
            })
            .collect();
        let tau = autocorr_time(&trajs).unwrap();
        assert!(!tau.degenerate);
        assert!((tau.tau - 0.1).abs() < 0.02, "{}", tau.tau);
    }

    #[test]
    fn slow_drift_has_long_autocorrelation_time() {
        let states = (0..1001).flat_map(|l| [0.0, 2.0 + (l as f64 * 0.003).sin()]).collect();
        let tau = autocorr_time(&[fixture(2, 1, states)]).unwrap();
        assert!(tau.tau > 100.0 * 0.1, "{}", tau.tau);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let t = fixture(2, 1, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let tau = autocorr_time(&[t]).unwrap();
        assert!(tau.degenerate);
        assert_eq!(tau.tau, 0.1);
    }

    #[test]
    fn effective_sample_size_examples() {
        assert_eq!(effective_sample_size(10.0, 10.0, 10.0), 10.0);
        assert_eq!(effective_sample_size(1.0, 1500.0, 10.0), 150.0);
        assert_eq!(effective_sample_size(7.0, 3.0, 3.0), 7.0);
    }
}
