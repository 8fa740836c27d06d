//! Piecewise-polynomial hypothesis spaces adapted to the distance measure.
//!
//! Basis function `p = cell * (degree + 1) + k` lives on one cell of the
//! partition and is a polynomial of degree `<= k` in the cell's local
//! coordinate `u in [-1, 1]`. Within each cell the functions are
//! orthonormalized so that `<psi_p(r) r, psi_q(r) r>` under the histogram
//! quadrature of the measure is `delta_pq`.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::measure::{observed_count, visit_observed, EmpiricalMeasure};
use crate::model::locate_cell;
use crate::par;
use crate::sim::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Equal-width cells on the support.
    #[default]
    Uniform,
    /// Cells carrying equal mass under the measure.
    RhoAdaptive,
}

/// `n = round(C (M / ln M)^{1/(2s+1)})`, at least 1.
pub fn dimension_rule(m: usize, s: usize, c: f64) -> Result<usize> {
    if m < 3 {
        return input(format!("dimension rule needs M >= 3, got {m}"));
    }
    dimension_from_count(m as f64, s, c)
}

/// The dimension rule with the sample count `M T / dt` of long trajectories.
pub fn dimension_rule_long_t(m: usize, horizon: f64, dt: f64, s: usize, c: f64) -> Result<usize> {
    if !(horizon > 0.0 && dt > 0.0) || m == 0 {
        return input("long-trajectory dimension rule needs positive M, T and dt");
    }
    let count = m as f64 * horizon / dt;
    if count < 3.0 {
        return input(format!("M T / dt = {count} must be at least 3"));
    }
    dimension_from_count(count, s, c)
}

fn dimension_from_count(count: f64, s: usize, c: f64) -> Result<usize> {
    if !(c > 0.0 && c.is_finite()) {
        return input(format!("dimension constant must be positive, got {c}"));
    }
    if s == 0 {
        return input("regularity index s must be at least 1");
    }
    let n = c * (count / count.ln()).powf(1.0 / (2 * s + 1) as f64);
    Ok((n.round() as usize).max(1))
}

/// Serializable description of a basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub knots: Vec<f64>,
    pub degree: usize,
    /// Local monomial coefficients of every basis function, `degree + 1` each.
    pub scales: Vec<f64>,
    pub inactive: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisBasis {
    knots: Vec<f64>,
    degree: usize,
    scales: Vec<f64>,
    active: Vec<bool>,
}

/// Relative norm below which an orthogonalized function counts as degenerate.
const DEGENERATE: f64 = 1e-8;

impl HypothesisBasis {
    pub fn from_descriptor(desc: BasisDescriptor) -> Result<Self> {
        let cells = desc.knots.len().saturating_sub(1);
        let per = desc.degree + 1;
        if cells == 0 || desc.knots.windows(2).any(|w| !(w[0] < w[1])) {
            return input("basis knots must be strictly increasing, at least two");
        }
        if desc.scales.len() != cells * per * per {
            return input("basis scales do not match knots and degree");
        }
        let n = cells * per;
        let mut active = vec![true; n];
        for &p in &desc.inactive {
            if p >= n {
                return input(format!("inactive index {p} out of range"));
            }
            active[p] = false;
        }
        Ok(Self { knots: desc.knots, degree: desc.degree, scales: desc.scales, active })
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            knots: self.knots.clone(),
            degree: self.degree,
            scales: self.scales.clone(),
            inactive: (0..self.len()).filter(|&p| !self.active[p]).collect(),
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_cells(&self) -> usize {
        self.knots.len() - 1
    }

    /// Total number of basis functions `n`.
    pub fn len(&self) -> usize {
        self.n_cells() * (self.degree + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_active(&self, p: usize) -> bool {
        self.active[p]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Local monomial coefficients of basis function `p`.
    pub fn coefficients_of(&self, p: usize) -> &[f64] {
        let per = self.degree + 1;
        &self.scales[p * per..(p + 1) * per]
    }

    /// `psi_p(r)`; zero outside the cell of `p` and outside the support.
    pub fn eval(&self, p: usize, r: f64) -> Result<f64> {
        if p >= self.len() {
            return input(format!("basis index {p} out of range 0..{}", self.len()));
        }
        let mut vals = vec![0.0; self.degree + 1];
        Ok(match self.cell_values(r, &mut vals) {
            Some(cell) if cell == p / (self.degree + 1) => vals[p % (self.degree + 1)],
            _ => 0.0,
        })
    }

    /// Values of the `degree + 1` functions living on the cell containing `r`.
    /// Returns that cell, or `None` when `r` lies outside the support.
    #[inline]
    pub fn cell_values(&self, r: f64, out: &mut [f64]) -> Option<usize> {
        let (lo, hi) = self.support();
        if !(r >= lo && r <= hi) {
            return None;
        }
        let cell = locate_cell(&self.knots, r);
        let (a, b) = (self.knots[cell], self.knots[cell + 1]);
        let u = (2.0 * r - a - b) / (b - a);
        let per = self.degree + 1;
        for (k, o) in out.iter_mut().enumerate().take(per) {
            let c = self.coefficients_of(cell * per + k);
            *o = c.iter().rev().fold(0.0, |acc, &ck| acc * u + ck);
        }
        Some(cell)
    }

    /// Local monomial coefficients of `sum_p a_p psi_p`, cell-major.
    pub fn combine(&self, coefficients: &[f64]) -> Vec<f64> {
        let per = self.degree + 1;
        let mut out = vec![0.0; self.n_cells() * per];
        for (p, &a) in coefficients.iter().enumerate() {
            if a == 0.0 || !self.active[p] {
                continue;
            }
            let cell = p / per;
            for (o, c) in out[cell * per..(cell + 1) * per].iter_mut().zip(self.coefficients_of(p)) {
                *o += a * c;
            }
        }
        out
    }
}

fn partition(measure: &EmpiricalMeasure, n_cells: usize, mode: PartitionMode) -> Vec<f64> {
    let (lo, hi) = measure.support();
    match mode {
        PartitionMode::Uniform => {
            let mut k: Vec<f64> = (0..=n_cells).map(|j| lo + (hi - lo) * j as f64 / n_cells as f64).collect();
            k[n_cells] = hi;
            k
        }
        PartitionMode::RhoAdaptive => {
            let edges = measure.edges();
            let bins = measure.bins();
            let mut cum = Vec::with_capacity(bins + 1);
            cum.push(0.0);
            for w in measure.weights() {
                cum.push(cum.last().unwrap() + w);
            }
            let mut idx = vec![0usize];
            for j in 1..n_cells {
                let target = j as f64 / n_cells as f64;
                let e = cum.partition_point(|&c| c < target).clamp(1, bins - 1);
                let prev = *idx.last().unwrap();
                // keep strictly increasing, leaving room for the remaining cells
                let e = e.max(prev + 1).min(bins - (n_cells - j));
                idx.push(e);
            }
            idx.push(bins);
            idx.into_iter().map(|i| edges[i]).collect()
        }
    }
}

fn check_partition(measure: &EmpiricalMeasure, n_cells: usize, mode: PartitionMode) -> Result<Vec<f64>> {
    if n_cells == 0 {
        return input("need at least one cell");
    }
    let (lo, hi) = measure.support();
    if !(hi > lo) {
        return input("measure support has zero width");
    }
    if mode == PartitionMode::RhoAdaptive && n_cells > measure.bins() {
        return input(format!("cannot place {n_cells} equal-mass cells on {} bins", measure.bins()));
    }
    Ok(partition(measure, n_cells, mode))
}

/// Adds `weight * r^2 u^i u^j` to the monomial Gram matrix of the cell of `r`.
#[inline]
fn accumulate_gram(knots: &[f64], per: usize, r: f64, weight: f64, gram: &mut [f64], pows: &mut [f64]) {
    let cell = locate_cell(knots, r);
    let (a, b) = (knots[cell], knots[cell + 1]);
    let u = (2.0 * r - a - b) / (b - a);
    pows[0] = 1.0;
    for k in 1..per {
        pows[k] = pows[k - 1] * u;
    }
    let g = &mut gram[cell * per * per..(cell + 1) * per * per];
    for i in 0..per {
        for j in 0..per {
            g[i * per + j] += pows[i] * pows[j] * r * r * weight;
        }
    }
}

/// Builds `n_cells * (degree + 1)` basis functions on the support of `measure`,
/// orthonormal under its midpoint quadrature.
///
/// Functions on cells without quadrature mass, or that become linearly
/// dependent there, are flagged inactive and identically zero.
pub fn build_basis(measure: &EmpiricalMeasure, n_cells: usize, degree: usize, mode: PartitionMode) -> Result<HypothesisBasis> {
    let knots = check_partition(measure, n_cells, mode)?;
    let per = degree + 1;
    let mut gram = vec![0.0; n_cells * per * per];
    let mut pows = vec![0.0; per];
    for (r, &w) in measure.midpoints().zip(measure.weights()) {
        if w > 0.0 {
            accumulate_gram(&knots, per, r, w, &mut gram, &mut pows);
        }
    }
    Ok(orthonormalize(knots, degree, &gram))
}

/// As [`build_basis`], but orthonormal under the exact empirical measure of
/// the observed distances in `trajs`; `measure` only places the knots.
pub fn build_basis_on_samples(
    trajs: &[Trajectory],
    measure: &EmpiricalMeasure,
    n_cells: usize,
    degree: usize,
    mode: PartitionMode,
) -> Result<HypothesisBasis> {
    let knots = check_partition(measure, n_cells, mode)?;
    let per = degree + 1;
    let len = n_cells * per * per;
    let partial = par::map_indexed(trajs.len(), |m| {
        let mut g = vec![0.0; len];
        let mut pows = vec![0.0; per];
        let (lo, hi) = (knots[0], knots[n_cells]);
        visit_observed(&trajs[m], |r| {
            if r >= lo && r <= hi {
                accumulate_gram(&knots, per, r, 1.0, &mut g, &mut pows);
            }
        });
        g
    });
    let sum = par::tree_reduce(partial, |mut a, b| {
        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        a
    })
    .ok_or_else(|| crate::error::Error::Input("no trajectories given".into()))?;
    let count = observed_count(trajs) as f64;
    let gram: Vec<f64> = sum.into_iter().map(|v| v / count).collect();
    Ok(orthonormalize(knots, degree, &gram))
}

fn orthonormalize(knots: Vec<f64>, degree: usize, gram: &[f64]) -> HypothesisBasis {
    let per = degree + 1;
    let n_cells = knots.len() - 1;
    let mut scales = vec![0.0; n_cells * per * per];
    let mut active = vec![false; n_cells * per];
    for cell in 0..n_cells {
        let g = &gram[cell * per * per..(cell + 1) * per * per];
        let inner = |x: &[f64], y: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..per {
                for j in 0..per {
                    s += x[i] * g[i * per + j] * y[j];
                }
            }
            s
        };
        let mut done: Vec<Vec<f64>> = Vec::with_capacity(per);
        for k in 0..per {
            let mut v = vec![0.0; per];
            v[k] = 1.0;
            let start = inner(&v, &v).sqrt();
            if !(start > 0.0) {
                continue;
            }
            // Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for q in &done {
                    let proj = inner(&v, q);
                    v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= proj * qi);
                }
            }
            let norm = inner(&v, &v).max(0.0).sqrt();
            if norm <= DEGENERATE * start {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let p = cell * per + k;
            scales[p * per..(p + 1) * per].copy_from_slice(&v);
            active[p] = true;
            done.push(v);
        }
    }
    HypothesisBasis { knots, degree, scales, active }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn measure(lo: f64, hi: f64, counts: &[u64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_counts(lo, hi, counts).unwrap()
    }

    /// Gram matrix of `psi_p(r) r` under the midpoint quadrature, computed
    /// pointwise through `eval`.
    fn gram(basis: &HypothesisBasis, m: &EmpiricalMeasure) -> Vec<Vec<f64>> {
        let n = basis.len();
        let mut g = vec![vec![0.0; n]; n];
        for (r, &w) in m.midpoints().zip(m.weights()) {
            let v: Vec<f64> = (0..n).map(|p| basis.eval(p, r).unwrap() * r).collect();
            for p in 0..n {
                for q in 0..n {
                    g[p][q] += v[p] * v[q] * w;
                }
            }
        }
        g
    }

    #[test]
    fn dimension_rule_examples() {
        // (20 / ln 20)^(1/3) = 1.883
        assert_eq!(dimension_rule(20, 1, 1.0).unwrap(), 2);
        assert!(dimension_rule(20, 1, 0.0).is_err());
        assert!(dimension_rule(2, 1, 1.0).is_err());
        let expect = (40.0 * (4096.0 / 4096f64.ln()).powf(1.0 / 3.0)).round() as usize;
        assert_eq!(dimension_rule(4096, 1, 40.0).unwrap(), expect);
        assert_eq!(expect, 316);
    }

    #[test]
    fn long_trajectory_rule() {
        let expect = (4.0 * (1000.0 / 1000f64.ln()).powf(1.0 / 3.0)).round() as usize;
        assert_eq!(dimension_rule_long_t(2, 5.0, 0.01, 1, 4.0).unwrap(), expect);
        assert_eq!(expect, 21);
        assert!(dimension_rule_long_t(1, 1.0, 1.0, 1, 4.0).is_err());
        let mut prev = 0;
        for m in [1, 2, 4, 8, 16, 32] {
            let n = dimension_rule_long_t(m, 5.0, 0.01, 1, 4.0).unwrap();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn dimension_rule_monotone() {
        let mut prev = 0;
        for m in 3..3000 {
            let n = dimension_rule(m, 2, 30.0).unwrap();
            assert!(n >= prev);
            prev = n;
        }
        for c in 1..50 {
            assert!(dimension_rule(500, 1, c as f64 + 1.0).unwrap() >= dimension_rule(500, 1, c as f64).unwrap());
        }
    }

    #[test]
    fn single_indicator() {
        let m = measure(0.0, 1.0, &[1; 10]);
        let b = build_basis(&m, 1, 0, PartitionMode::Uniform).unwrap();
        assert_eq!(b.len(), 1);
        let norm: f64 = m.midpoints().map(|r| r * r * 0.1).sum::<f64>().sqrt();
        assert_relative_eq!(b.eval(0, 0.3).unwrap(), 1.0 / norm, max_relative = 1e-12);
        assert_relative_eq!(b.eval(0, 0.9).unwrap(), 1.0 / norm, max_relative = 1e-12);
    }

    #[test]
    fn two_uniform_indicators() {
        let m = measure(0.0, 2.0, &[1; 20]);
        let b = build_basis(&m, 2, 0, PartitionMode::Uniform).unwrap();
        assert_eq!(b.knots(), &[0.0, 1.0, 2.0]);
        assert!(b.eval(0, 0.5).unwrap() > 0.0);
        assert_eq!(b.eval(0, 1.0).unwrap(), 0.0);
        assert!(b.eval(1, 1.0).unwrap() > 0.0);
        assert!(b.eval(1, 2.0).unwrap() > 0.0);
        assert_eq!(b.eval(1, 2.0 + 1e-12).unwrap(), 0.0);
        assert_eq!(b.eval(0, -0.1).unwrap(), 0.0);
        assert!(b.eval(2, 0.5).is_err());
    }

    #[test]
    fn linear_basis_is_orthonormal() {
        let counts: Vec<u64> = (0..400).map(|k| 1 + (k * 7 % 13) as u64).collect();
        let m = measure(0.2, 3.0, &counts);
        for mode in [PartitionMode::Uniform, PartitionMode::RhoAdaptive] {
            let b = build_basis(&m, 4, 1, mode).unwrap();
            assert_eq!(b.len(), 8);
            assert_eq!(b.active_count(), 8);
            let g = gram(&b, &m);
            for p in 0..8 {
                for q in 0..8 {
                    let want = if p == q { 1.0 } else { 0.0 };
                    assert!((g[p][q] - want).abs() < 1e-8, "{mode:?} G[{p}][{q}] = {}", g[p][q]);
                    if p / 2 != q / 2 {
                        assert_eq!(g[p][q], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn adaptive_cells_carry_equal_mass() {
        let counts: Vec<u64> = (0..1000).map(|k| if k < 500 { 9 } else { 1 }).collect();
        let m = measure(0.0, 10.0, &counts);
        let b = build_basis(&m, 5, 0, PartitionMode::RhoAdaptive).unwrap();
        let mut mass = [0.0; 5];
        for (r, w) in m.midpoints().zip(m.weights()) {
            mass[locate_cell(b.knots(), r)] += w;
        }
        for v in mass {
            assert!((v - 0.2).abs() < 0.01, "{mass:?}");
        }
        assert!(b.knots().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_cells_are_inactive() {
        let mut counts = vec![1u64; 100];
        counts[25..50].iter_mut().for_each(|c| *c = 0);
        let m = measure(0.0, 4.0, &counts);
        let b = build_basis(&m, 4, 1, PartitionMode::Uniform).unwrap();
        assert!(!b.is_active(2) && !b.is_active(3));
        assert_eq!(b.active_count(), 6);
        assert_eq!(b.eval(2, 1.5).unwrap(), 0.0);
        let desc = b.descriptor();
        assert_eq!(desc.inactive, vec![2, 3]);
        let back = HypothesisBasis::from_descriptor(serde_json::from_str(&serde_json::to_string(&desc).unwrap()).unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn reconstructs_piecewise_constant_at_midpoints() {
        let m = measure(1.0, 3.0, &[2; 40]);
        let b = build_basis(&m, 8, 0, PartitionMode::Uniform).unwrap();
        let target: Vec<f64> = (0..8).map(|c| (c as f64 - 3.5).powi(2)).collect();
        let coef: Vec<f64> = (0..8).map(|p| target[p] / b.eval(p, 1.0 + 0.25 * p as f64 + 0.125).unwrap()).collect();
        for c in 0..8 {
            let mid = 1.0 + 0.25 * c as f64 + 0.125;
            let v: f64 = (0..8).map(|p| coef[p] * b.eval(p, mid).unwrap()).sum();
            assert_relative_eq!(v, target[c], max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn every_point_in_exactly_one_cell() {
        let m = measure(0.5, 2.5, &[3; 64]);
        let b = build_basis(&m, 7, 0, PartitionMode::Uniform).unwrap();
        for i in 0..=2000 {
            let r = 0.5 + 2.0 * i as f64 / 2000.0;
            let hits = (0..7).filter(|&p| b.eval(p, r).unwrap() != 0.0).count();
            assert_eq!(hits, 1, "r = {r}");
        }
    }
}
