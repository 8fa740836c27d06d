//! System parameters, initial distributions and radial interaction kernels.
//!
//! A kernel `phi(r)` enters the drift of particle `i` as
//! `(1/N) * sum_j phi(|x_j - x_i|) * (x_j - x_i)`. Besides its values, every
//! kernel carries two numbers describing the admissible set it belongs to:
//! a support radius `R` and a uniform bound `S` on `|phi|`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Support radius of the opinion-dynamics kernel; it vanishes beyond 1.05.
pub const OPINION_RADIUS: f64 = 2.0;

/// Radial interaction kernel together with its admissible-set metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionKernel {
    shape: KernelShape,
    radius: f64,
    bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelShape {
    /// Heterophilious opinion-dynamics kernel, `C^{1,1}` with support in `[0, 1.05]`.
    OpinionPiecewise,
    TruncatedLennardJones(LennardJones),
    PiecewisePolynomial(PiecewisePolynomial),
    /// Piecewise-linear interpolant, constant beyond its end nodes.
    Tabulated(LinearInterpolant),
    Constant {
        value: f64,
    },
    Zero,
}

impl InteractionKernel {
    pub fn opinion() -> Self {
        Self { shape: KernelShape::OpinionPiecewise, radius: OPINION_RADIUS, bound: 1.0 }
    }

    /// Lennard-Jones kernel `Phi'(r)/r`, continued below `r_trunc` by `a*exp(-b*r^12)`.
    ///
    /// `radius` is the support bound used for this kernel's admissible set; the
    /// kernel itself is not compactly supported, so the caller supplies the
    /// range the dynamics actually explore.
    pub fn lennard_jones(p: f64, q: f64, eps: f64, r_m: f64, r_trunc: f64, radius: f64) -> Result<Self> {
        let lj = LennardJones::new(p, q, eps, r_m, r_trunc)?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Config(format!("Lennard-Jones support radius must be positive, got {radius}")));
        }
        let bound = lj.sup_abs();
        Ok(Self { shape: KernelShape::TruncatedLennardJones(lj), radius, bound })
    }

    pub fn constant(value: f64) -> Self {
        Self { shape: KernelShape::Constant { value }, radius: f64::INFINITY, bound: value.abs() }
    }

    pub fn zero() -> Self {
        Self { shape: KernelShape::Zero, radius: f64::INFINITY, bound: 0.0 }
    }

    pub fn piecewise(poly: PiecewisePolynomial) -> Self {
        let radius = poly.knots[poly.knots.len() - 1];
        let bound = poly.sup_abs();
        Self { shape: KernelShape::PiecewisePolynomial(poly), radius, bound }
    }

    pub fn tabulated(table: LinearInterpolant) -> Self {
        let radius = table.nodes[table.nodes.len() - 1];
        let bound = table.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self { shape: KernelShape::Tabulated(table), radius, bound }
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    /// Support radius `R` of the admissible set.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Uniform bound `S` on `|phi|`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn id(&self) -> &'static str {
        match self.shape {
            KernelShape::OpinionPiecewise => "opinion",
            KernelShape::TruncatedLennardJones(_) => "lennard_jones",
            KernelShape::PiecewisePolynomial(_) => "piecewise_polynomial",
            KernelShape::Tabulated(_) => "tabulated",
            KernelShape::Constant { .. } => "constant",
            KernelShape::Zero => "zero",
        }
    }

    /// Checked evaluation of `phi(r)`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return input(format!("kernel argument must be finite and nonnegative, got {r}"));
        }
        Ok(self.value(r))
    }

    /// Unchecked evaluation for hot loops; `r` must be finite and nonnegative.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match &self.shape {
            KernelShape::OpinionPiecewise => opinion_value(r),
            KernelShape::TruncatedLennardJones(lj) => lj.value(r),
            KernelShape::PiecewisePolynomial(pp) => pp.value(r),
            KernelShape::Tabulated(t) => t.value(r),
            KernelShape::Constant { value } => *value,
            KernelShape::Zero => 0.0,
        }
    }
}

#[inline]
fn opinion_value(r: f64) -> f64 {
    const A: f64 = FRAC_1_SQRT_2 - 0.05;
    const B: f64 = FRAC_1_SQRT_2 + 0.05;
    if r < A {
        0.4
    } else if r < B {
        -0.3 * (10.0 * PI * (r - A)).cos() + 0.7
    } else if r < 0.95 {
        1.0
    } else if r < 1.05 {
        0.5 * (10.0 * PI * (r - 0.95)).cos() + 0.5
    } else {
        0.0
    }
}

/// Lennard-Jones kernel parameters with the exponential continuation below `r_trunc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LennardJones {
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    pub r_m: f64,
    pub r_trunc: f64,
    pub a: f64,
    pub b: f64,
}

impl LennardJones {
    pub fn new(p: f64, q: f64, eps: f64, r_m: f64, r_trunc: f64) -> Result<Self> {
        if !(p > q && q > 0.0 && eps > 0.0 && r_m > 0.0 && r_trunc > 0.0) {
            return Err(Error::Config(format!(
                "Lennard-Jones parameters need p > q > 0, eps > 0, r_m > 0, r_trunc > 0 (p={p}, q={q}, eps={eps}, r_m={r_m}, r_trunc={r_trunc})"
            )));
        }
        let (a, b) = lj_truncation_coeffs(p, q, eps, r_m, r_trunc)?;
        Ok(Self { p, q, eps, r_m, r_trunc, a, b })
    }

    /// The potential `Phi(r)` whose derivative is `r * phi(r)` (untruncated).
    pub fn potential(&self, r: f64) -> f64 {
        lj_potential(self.p, self.q, self.eps, self.r_m, r)
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if r < self.r_trunc {
            let r6 = r * r * r;
            let r6 = r6 * r6;
            self.a * (-self.b * r6 * r6).exp()
        } else {
            lj_phi(self.p, self.q, self.eps, self.r_m, r)
        }
    }

    /// `sup |phi|` over `[0, inf)`.
    fn sup_abs(&self) -> f64 {
        // Exponential branch is monotone in magnitude between a and phi(r_trunc);
        // the power-law branch has one interior extremum at r*.
        let r_star = self.r_m * ((self.p + 2.0) / (self.q + 2.0)).powf(1.0 / (self.p - self.q));
        let mut s = self.a.abs().max(lj_phi(self.p, self.q, self.eps, self.r_m, self.r_trunc).abs());
        if r_star > self.r_trunc {
            s = s.max(lj_phi(self.p, self.q, self.eps, self.r_m, r_star).abs());
        }
        s
    }
}

/// `Phi(r) = p*eps/(p-q) * [ (q/p)(r_m/r)^p - (r_m/r)^q ]`.
pub fn lj_potential(p: f64, q: f64, eps: f64, r_m: f64, r: f64) -> f64 {
    let x = r_m / r;
    p * eps / (p - q) * (q / p * x.powf(p) - x.powf(q))
}

/// `Phi'(r)/r` for the untruncated potential.
#[inline]
pub fn lj_phi(p: f64, q: f64, eps: f64, r_m: f64, r: f64) -> f64 {
    let k = p * q * eps / (p - q);
    k * (r_m.powf(q) * r.powf(-q - 2.0) - r_m.powf(p) * r.powf(-p - 2.0))
}

/// Derivative of [`lj_phi`] with respect to `r`.
pub fn lj_phi_derivative(p: f64, q: f64, eps: f64, r_m: f64, r: f64) -> f64 {
    let k = p * q * eps / (p - q);
    k * (-(q + 2.0) * r_m.powf(q) * r.powf(-q - 3.0) + (p + 2.0) * r_m.powf(p) * r.powf(-p - 3.0))
}

/// Coefficients `(a, b)` of `a*exp(-b*r^12)` matching value and slope of the
/// Lennard-Jones kernel at `r_trunc`.
pub fn lj_truncation_coeffs(p: f64, q: f64, eps: f64, r_m: f64, r_trunc: f64) -> Result<(f64, f64)> {
    if !(r_trunc > 0.0 && r_trunc < r_m) {
        return Err(Error::DegenerateMatching(format!("truncation radius {r_trunc} must lie in (0, r_m = {r_m})")));
    }
    let phi = lj_phi(p, q, eps, r_m, r_trunc);
    if phi == 0.0 || !phi.is_finite() {
        return Err(Error::DegenerateMatching(format!("kernel value at r_trunc = {r_trunc} is {phi}")));
    }
    let dphi = lj_phi_derivative(p, q, eps, r_m, r_trunc);
    let b = -dphi / (12.0 * r_trunc.powi(11) * phi);
    let a = phi * (b * r_trunc.powi(12)).exp();
    Ok((a, b))
}

/// Index of the cell of `knots` containing `r`, with half-open cells and a
/// right-closed last cell. Values outside `[knots[0], knots[last]]` clamp.
#[inline]
pub(crate) fn locate_cell(knots: &[f64], r: f64) -> usize {
    let cells = knots.len() - 1;
    knots.partition_point(|&k| k <= r).saturating_sub(1).min(cells - 1)
}

/// Piecewise polynomial on a partition, written per cell in the local
/// coordinate `u = (r - center) / half_width`, so `u` spans `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePolynomial {
    pub knots: Vec<f64>,
    pub degree: usize,
    /// Cell-major, `degree + 1` monomial coefficients per cell.
    pub coefficients: Vec<f64>,
}

impl PiecewisePolynomial {
    pub fn new(knots: Vec<f64>, degree: usize, coefficients: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.windows(2).any(|w| !(w[0] < w[1])) || knots.iter().any(|k| !k.is_finite()) {
            return input("piecewise polynomial knots must be finite, strictly increasing, at least two");
        }
        if coefficients.len() != (knots.len() - 1) * (degree + 1) {
            return input(format!(
                "expected {} coefficients for {} cells of degree {degree}, got {}",
                (knots.len() - 1) * (degree + 1),
                knots.len() - 1,
                coefficients.len()
            ));
        }
        Ok(Self { knots, degree, coefficients })
    }

    pub fn n_cells(&self) -> usize {
        self.knots.len() - 1
    }

    /// Constant extrapolation with the boundary values outside the partition.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let last = self.knots.len() - 1;
        let r = r.clamp(self.knots[0], self.knots[last]);
        let cell = locate_cell(&self.knots, r);
        let (lo, hi) = (self.knots[cell], self.knots[cell + 1]);
        let u = (2.0 * r - lo - hi) / (hi - lo);
        let c = &self.coefficients[cell * (self.degree + 1)..(cell + 1) * (self.degree + 1)];
        c.iter().rev().fold(0.0, |acc, &ck| acc * u + ck)
    }

    fn sup_abs(&self) -> f64 {
        self.coefficients.chunks(self.degree + 1).map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Piecewise-linear interpolant through `(nodes[k], values[k])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearInterpolant {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl LinearInterpolant {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return input("interpolant needs at least two nodes and one value per node");
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return input("interpolant nodes must be strictly increasing");
        }
        Ok(Self { nodes, values })
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let last = self.nodes.len() - 1;
        if r <= self.nodes[0] {
            return self.values[0];
        }
        if r >= self.nodes[last] {
            return self.values[last];
        }
        let k = locate_cell(&self.nodes, r);
        let (x0, x1) = (self.nodes[k], self.nodes[k + 1]);
        if r == x0 {
            return self.values[k];
        }
        let t = (r - x0) / (x1 - x0);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }

    /// Largest slope between adjacent nodes, a Lipschitz constant of the interpolant.
    pub fn lipschitz(&self) -> f64 {
        self.nodes.windows(2).zip(self.values.windows(2)).map(|(x, v)| ((v[1] - v[0]) / (x[1] - x[0])).abs()).fold(0.0, f64::max)
    }
}

/// Particle count, dimension, noise scale and kernel of a first-order system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub kernel: InteractionKernel,
}

impl SystemParams {
    pub fn new(n: usize, d: usize, sigma: f64, kernel: InteractionKernel) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("need at least two particles, got {n}")));
        }
        if d < 1 {
            return Err(Error::Config("spatial dimension must be at least 1".into()));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!("noise scale must be finite and nonnegative, got {sigma}")));
        }
        Ok(Self { n, d, sigma, kernel })
    }

    pub fn with_kernel(&self, kernel: InteractionKernel) -> Self {
        Self { kernel, ..self.clone() }
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.n, self.d, sigma, self.kernel.clone())
    }
}

/// Distribution of the initial state, applied independently per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialDistribution {
    UniformBox { lo: f64, hi: f64 },
    IsotropicGaussian { mean: f64, scale: f64 },
}

impl InitialDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::UniformBox { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::Config(format!("uniform box needs lo < hi, got [{lo}, {hi}]")))
            }
            Self::IsotropicGaussian { mean, scale } if !(scale > 0.0 && scale.is_finite() && mean.is_finite()) => {
                Err(Error::Config(format!("gaussian scale must be positive, got {scale}")))
            }
            _ => Ok(()),
        }
    }

    /// Fills `out` particle-major, coordinate-minor.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            Self::UniformBox { lo, hi } => {
                for x in out.iter_mut() {
                    *x = lo + (hi - lo) * rng.random::<f64>();
                }
            }
            Self::IsotropicGaussian { mean, scale } => {
                for x in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = mean + scale * z;
                }
            }
        }
    }
}
