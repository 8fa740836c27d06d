//! Normal equations of the discretized likelihood and the kernel estimator.
//!
//! For a hypothesis space spanned by `psi_1..psi_n`, each trajectory
//! contributes
//!
//! ```text
//! A_m(p, q) = 1/(L N) sum_l <f_{psi_p}(X_l), f_{psi_q}(X_l)>
//! b_m(p)    = 1/(T N) sum_l <f_{psi_p}(X_l), X_{l+1} - X_l>
//! ```
//!
//! and the estimator solves `A a = b` with `A`, `b` the means over
//! trajectories. The noise scale cancels from these equations.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::eval::coercivity_estimate;
use crate::hypospace::{build_basis_on_samples, dimension_rule, dimension_rule_long_t, BasisDescriptor, HypothesisBasis, PartitionMode};
use crate::io::fmt_f64;
use crate::measure::{check_homogeneous, empirical_rho, EmpiricalMeasure, DEFAULT_BINS};
use crate::model::{InteractionKernel, LinearInterpolant, PiecewisePolynomial};
use crate::par;
use crate::sim::Trajectory;

pub const DEFAULT_RCOND: f64 = 1e-10;
pub const DEFAULT_GRID_POINTS: usize = 1000;

/// Trajectories per sequential block of the assembly reduction.
const BLOCK: usize = 16;

/// Per-trajectory normal matrix and vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySystem {
    /// Row-major `n x n`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Pairwise distances that fell outside the basis support.
    pub outside: u64,
}

/// Averaged normal equations `A a = b`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalSystem {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    active: Vec<bool>,
    pub meta: SystemMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemMeta {
    pub trajectories: usize,
    pub steps: usize,
    pub horizon: f64,
    pub particles: usize,
    pub outside: u64,
}

impl NormalSystem {
    /// Builds a system from a dense row-major matrix; all unknowns active.
    pub fn from_parts(n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != n * n || b.len() != n {
            return input(format!("expected a {n}x{n} matrix and {n}-vector"));
        }
        let meta = SystemMeta { trajectories: 0, steps: 0, horizon: 0.0, particles: 0, outside: 0 };
        Ok(Self { n, a, b, active: vec![true; n], meta })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn entry(&self, p: usize, q: usize) -> f64 {
        self.a[p * self.n + q]
    }
}

/// Unscaled sums for one trajectory.
fn accumulate(traj: &Trajectory, basis: &HypothesisBasis, a: &mut [f64], b: &mut [f64]) -> u64 {
    let (np, d) = (traj.n(), traj.d());
    let n = basis.len();
    let per = basis.degree() + 1;
    let inv_n = 1.0 / np as f64;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity((np - 1) * per); np * d];
    let mut vals = vec![0.0; per];
    let mut outside = 0;
    for l in 0..traj.steps() {
        let x = traj.state(l);
        let next = traj.state(l + 1);
        rows.iter_mut().for_each(Vec::clear);
        for i in 0..np {
            for j in i + 1..np {
                let mut r2 = 0.0;
                for c in 0..d {
                    let v = x[j * d + c] - x[i * d + c];
                    r2 += v * v;
                }
                let Some(cell) = basis.cell_values(r2.sqrt(), &mut vals) else {
                    outside += 1;
                    continue;
                };
                for (k, &v) in vals.iter().enumerate() {
                    let p = cell * per + k;
                    if !basis.is_active(p) {
                        continue;
                    }
                    let w = v * inv_n;
                    for c in 0..d {
                        let f = w * (x[j * d + c] - x[i * d + c]);
                        rows[i * d + c].push((p, f));
                        rows[j * d + c].push((p, -f));
                    }
                }
            }
        }
        for (row, entries) in rows.iter().enumerate() {
            let dx = next[row] - x[row];
            for &(pa, va) in entries {
                b[pa] += va * dx;
                let line = &mut a[pa * n..(pa + 1) * n];
                for &(pb, vb) in entries {
                    line[pb] += va * vb;
                }
            }
        }
    }
    outside
}

/// Normal matrix and vector of a single observed trajectory.
pub fn assemble_single(traj: &Trajectory, basis: &HypothesisBasis) -> TrajectorySystem {
    let n = basis.len();
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    let outside = accumulate(traj, basis, &mut a, &mut b);
    let steps = traj.steps() as f64;
    let np = traj.n() as f64;
    let sa = 1.0 / (steps * np);
    let sb = 1.0 / (traj.horizon() * np);
    a.iter_mut().for_each(|v| *v *= sa);
    b.iter_mut().for_each(|v| *v *= sb);
    TrajectorySystem { a, b, outside }
}

fn add_into(mut x: TrajectorySystem, y: TrajectorySystem) -> TrajectorySystem {
    x.a.iter_mut().zip(&y.a).for_each(|(u, v)| *u += v);
    x.b.iter_mut().zip(&y.b).for_each(|(u, v)| *u += v);
    x.outside += y.outside;
    x
}

/// Mean normal system over `trajs`.
///
/// Trajectories are summed sequentially in fixed blocks, then the blocks along
/// a fixed binary tree, so the result is bit-identical for any thread count.
pub fn assemble(trajs: &[Trajectory], basis: &HypothesisBasis) -> Result<NormalSystem> {
    let first = trajs.first().ok_or_else(|| Error::Input("no trajectories to assemble".into()))?;
    if let Some(t) = trajs.iter().find(|t| t.n() != first.n() || t.d() != first.d()) {
        return Err(Error::DataConsistency(format!(
            "trajectories disagree on dimensions: (N={}, d={}) vs (N={}, d={})",
            first.n(),
            first.d(),
            t.n(),
            t.d()
        )));
    }
    let blocks = trajs.len().div_ceil(BLOCK);
    let partial = par::map_indexed(blocks, |k| {
        let chunk = &trajs[k * BLOCK..((k + 1) * BLOCK).min(trajs.len())];
        chunk.iter().map(|t| assemble_single(t, basis)).reduce(add_into).unwrap()
    });
    let total = par::tree_reduce(partial, add_into).unwrap();
    let m = trajs.len() as f64;
    let n = basis.len();
    let active = (0..n).map(|p| basis.is_active(p)).collect();
    Ok(NormalSystem {
        n,
        a: total.a.into_iter().map(|v| v / m).collect(),
        b: total.b.into_iter().map(|v| v / m).collect(),
        active,
        meta: SystemMeta {
            trajectories: trajs.len(),
            steps: first.steps(),
            horizon: first.horizon(),
            particles: first.n(),
            outside: total.outside,
        },
    })
}

/// Pseudo-inverse solution of the normal equations.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    /// `A` was identically zero.
    pub degenerate: bool,
}

/// Solves `A a = b` discarding singular values below `rcond * sigma_max`;
/// inactive unknowns are set to zero.
pub fn solve(system: &NormalSystem, rcond: f64) -> Result<Solution> {
    if !(rcond > 0.0) {
        return input(format!("rcond must be positive, got {rcond}"));
    }
    let n = system.n;
    let a = DMatrix::from_row_slice(n, n, &system.a);
    let b = DVector::from_column_slice(&system.b);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Ok(Solution { coefficients: vec![0.0; n], rank: 0, degenerate: true });
    }
    let cut = rcond * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let x = svd.solve(&b, cut).map_err(|e| Error::Input(e.to_string()))?;
    let coefficients = x.iter().zip(&system.active).map(|(&v, &on)| if on { v } else { 0.0 }).collect();
    Ok(Solution { coefficients, rank, degenerate: false })
}

/// Estimated kernel: the raw piecewise polynomial and its smoothed interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatedKernel {
    pub coefficients: Vec<f64>,
    pub basis: HypothesisBasis,
    raw: InteractionKernel,
    smoothed: InteractionKernel,
    grid: LinearInterpolant,
}

impl EstimatedKernel {
    /// `sum_p a_p psi_p`, extended by its boundary values outside the support.
    pub fn raw(&self) -> &InteractionKernel {
        &self.raw
    }

    /// Linear interpolant on the fine grid, constant outside it.
    pub fn smoothed(&self) -> &InteractionKernel {
        &self.smoothed
    }

    pub fn grid(&self) -> &LinearInterpolant {
        &self.grid
    }

    pub fn to_json(&self) -> EstimatedKernelJson {
        EstimatedKernelJson {
            basis: self.basis.descriptor(),
            coefficients: self.coefficients.clone(),
            grid_r: self.grid.nodes.clone(),
            grid_phi_hat: self.grid.values.clone(),
        }
    }

    pub fn from_json(json: EstimatedKernelJson) -> Result<Self> {
        let basis = HypothesisBasis::from_descriptor(json.basis)?;
        if json.coefficients.len() != basis.len() {
            return input("coefficient count does not match basis");
        }
        let grid = LinearInterpolant::new(json.grid_r, json.grid_phi_hat)?;
        let raw = raw_kernel(&basis, &json.coefficients)?;
        Ok(Self { coefficients: json.coefficients, basis, raw, smoothed: InteractionKernel::tabulated(grid.clone()), grid })
    }

    /// CSV `r,phi_hat[,phi_true]` on the fine grid.
    pub fn write_csv<W: Write>(&self, mut w: W, truth: Option<&InteractionKernel>) -> Result<()> {
        writeln!(w, "{}", if truth.is_some() { "r,phi_hat,phi_true" } else { "r,phi_hat" })?;
        for (r, v) in self.grid.nodes.iter().zip(&self.grid.values) {
            match truth {
                Some(k) => writeln!(w, "{},{},{}", fmt_f64(*r), fmt_f64(*v), fmt_f64(k.value(*r)))?,
                None => writeln!(w, "{},{}", fmt_f64(*r), fmt_f64(*v))?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatedKernelJson {
    pub basis: BasisDescriptor,
    pub coefficients: Vec<f64>,
    pub grid_r: Vec<f64>,
    pub grid_phi_hat: Vec<f64>,
}

fn raw_kernel(basis: &HypothesisBasis, coefficients: &[f64]) -> Result<InteractionKernel> {
    let poly = PiecewisePolynomial::new(basis.knots().to_vec(), basis.degree(), basis.combine(coefficients))?;
    Ok(InteractionKernel::piecewise(poly))
}

/// Samples the raw estimator on `grid_points` equispaced nodes over the basis
/// support and interpolates linearly between them.
pub fn post_process(coefficients: &[f64], basis: &HypothesisBasis, grid_points: usize) -> Result<EstimatedKernel> {
    if grid_points < 2 {
        return input("smoothing grid needs at least two points");
    }
    if coefficients.len() != basis.len() {
        return input(format!("{} coefficients for {} basis functions", coefficients.len(), basis.len()));
    }
    let raw = raw_kernel(basis, coefficients)?;
    let (lo, hi) = basis.support();
    let last = grid_points - 1;
    let nodes: Vec<f64> = (0..grid_points).map(|k| if k == last { hi } else { lo + (hi - lo) * k as f64 / last as f64 }).collect();
    let values = nodes.iter().map(|&r| raw.value(r)).collect();
    let grid = LinearInterpolant::new(nodes, values)?;
    Ok(EstimatedKernel {
        coefficients: coefficients.to_vec(),
        basis: basis.clone(),
        raw,
        smoothed: InteractionKernel::tabulated(grid.clone()),
        grid,
    })
}

/// How the number of partition cells is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DimensionChoice {
    /// `C (M / ln M)^{1/(2s+1)}` cells for `M` trajectories.
    Trajectories,
    /// Same rule with `M T / dt` in place of `M`.
    LongTime,
    Fixed {
        cells: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Polynomial degree per cell; the regularity index is `s = degree + 1`.
    pub degree: usize,
    /// Constant `C` of the dimension rule.
    pub c: f64,
    #[serde(default)]
    pub mode: PartitionMode,
    #[serde(default = "default_rcond")]
    pub rcond: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Minimum histogram resolution for basis construction.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_dimension")]
    pub dimension: DimensionChoice,
}

fn default_rcond() -> f64 {
    DEFAULT_RCOND
}
fn default_grid() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_dimension() -> DimensionChoice {
    DimensionChoice::Trajectories
}

impl EstimatorConfig {
    pub fn new(degree: usize, c: f64) -> Self {
        Self {
            degree,
            c,
            mode: PartitionMode::Uniform,
            rcond: DEFAULT_RCOND,
            grid_points: DEFAULT_GRID_POINTS,
            bins: DEFAULT_BINS,
            dimension: DimensionChoice::Trajectories,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("dimension constant must be positive, got {}", self.c)));
        }
        if !(self.rcond > 0.0 && self.rcond < 1.0) {
            return Err(Error::Config(format!("rcond must lie in (0, 1), got {}", self.rcond)));
        }
        if self.grid_points < 2 || self.bins == 0 {
            return Err(Error::Config("grid_points must be >= 2 and bins >= 1".into()));
        }
        if let DimensionChoice::Fixed { cells: 0 } = self.dimension {
            return Err(Error::Config("fixed dimension needs at least one cell".into()));
        }
        Ok(())
    }

    pub fn cells_for(&self, trajs: &[Trajectory]) -> Result<usize> {
        let s = self.degree + 1;
        match self.dimension {
            DimensionChoice::Trajectories => dimension_rule(trajs.len(), s, self.c),
            DimensionChoice::LongTime => dimension_rule_long_t(trajs.len(), trajs[0].horizon(), trajs[0].dt(), s, self.c),
            DimensionChoice::Fixed { cells } => Ok(cells),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub trajectories: usize,
    pub cells: usize,
    pub basis_size: usize,
    pub active: usize,
    pub rank: usize,
    pub degenerate: bool,
    /// Smallest eigenvalue of the normal matrix on the active unknowns.
    pub lambda_min: f64,
    pub support: (f64, f64),
    pub outside_support: u64,
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub kernel: EstimatedKernel,
    pub measure: EmpiricalMeasure,
    pub system: NormalSystem,
    pub diagnostics: Diagnostics,
}

/// Histogram resolution used for a partition of `cells` cells: at least
/// `min_bins` and eight bins per cell, a multiple of `cells`.
fn bins_for(cells: usize, min_bins: usize) -> usize {
    let want = min_bins.max(8 * cells);
    want.div_ceil(cells) * cells
}

/// Learns the interaction kernel from observed trajectories.
pub fn estimate(trajs: &[Trajectory], config: &EstimatorConfig) -> Result<Estimate> {
    if trajs.is_empty() {
        return input("no trajectories to learn from");
    }
    config.validate()?;
    check_homogeneous(trajs)?;
    let cells = config.cells_for(trajs)?;
    let measure = empirical_rho(trajs, bins_for(cells, config.bins))?;
    estimate_with_measure(trajs, config, cells, measure)
}

fn estimate_with_measure(trajs: &[Trajectory], config: &EstimatorConfig, cells: usize, measure: EmpiricalMeasure) -> Result<Estimate> {
    let basis = build_basis_on_samples(trajs, &measure, cells, config.degree, config.mode)?;
    let system = assemble(trajs, &basis)?;
    let sol = solve(&system, config.rcond)?;
    let lambda_min = coercivity_estimate(&system);
    let kernel = post_process(&sol.coefficients, &basis, config.grid_points)?;
    let diagnostics = Diagnostics {
        trajectories: trajs.len(),
        cells,
        basis_size: basis.len(),
        active: basis.active_count(),
        rank: sol.rank,
        degenerate: sol.degenerate,
        lambda_min,
        support: measure.support(),
        outside_support: system.meta.outside,
    };
    Ok(Estimate { kernel, measure, system, diagnostics })
}
