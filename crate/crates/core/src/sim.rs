//! Euler-Maruyama simulation of first-order interacting particle systems.
//!
//! States are flat slices of `N * d` reals, particle-major and
//! coordinate-minor. Noise comes from a counter-based ChaCha stream per
//! trajectory: the initial condition is drawn first, then one block of `N * d`
//! standard normals per step. Replaying a `(seed, stream)` pair therefore
//! reproduces a path exactly, and two systems driven by the same stream share
//! their initial condition and Brownian increments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::model::{InitialDistribution, InteractionKernel, SystemParams};
use crate::par;

/// Metadata recorded alongside a simulated path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub stream: u64,
    pub sigma: f64,
    pub kernel_id: String,
    /// Observation gap in units of the simulation step.
    pub gap: usize,
}

/// Uniformly sampled path `X_{t_0}, ..., X_{t_L}` with `t_l = l * dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    n: usize,
    d: usize,
    dt: f64,
    states: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(n: usize, d: usize, dt: f64, states: Vec<f64>, meta: TrajectoryMeta) -> Result<Self> {
        let width = n * d;
        if n < 2 || d < 1 {
            return input(format!("trajectory needs N >= 2 and d >= 1, got N={n}, d={d}"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return input(format!("time step must be positive, got {dt}"));
        }
        if !states.len().is_multiple_of(width) || states.len() / width < 2 {
            return input(format!("state buffer of length {} does not hold L+1 >= 2 states of size {width}", states.len()));
        }
        if states.iter().any(|x| !x.is_finite()) {
            return input("trajectory contains non-finite states");
        }
        Ok(Self { n, d, dt, states, meta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps `L`; the path holds `L + 1` states.
    pub fn steps(&self) -> usize {
        self.states.len() / (self.n * self.d) - 1
    }

    /// Final time `T = L * dt`.
    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|l| l as f64 * self.dt).collect()
    }

    pub fn state(&self, l: usize) -> &[f64] {
        let w = self.n * self.d;
        &self.states[l * w..(l + 1) * w]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Applies `perm` to the particle labels of every state.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let (n, d) = (self.n, self.d);
        let mut states = vec![0.0; self.states.len()];
        for (src, dst) in self.states.chunks(n * d).zip(states.chunks_mut(n * d)) {
            for (new, &old) in perm.iter().enumerate() {
                dst[new * d..(new + 1) * d].copy_from_slice(&src[old * d..(old + 1) * d]);
            }
        }
        Self { states, ..self.clone() }
    }
}

/// Seeded Gaussian noise source for one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn generator(&self) -> NoiseGenerator {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        NoiseGenerator { rng }
    }
}

pub struct NoiseGenerator {
    rng: ChaCha8Rng,
}

impl NoiseGenerator {
    pub fn initial_state(&mut self, init: &InitialDistribution, out: &mut [f64]) {
        init.sample_into(&mut self.rng, out);
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.rng.sample(StandardNormal);
        }
    }
}

/// Displacements `x_j - x_i` and distances for all pairs `i < j`, in
/// lexicographic pair order.
#[derive(Clone, Debug, PartialEq)]
pub struct Pairwise {
    pub pairs: Vec<(usize, usize)>,
    pub displacements: Vec<f64>,
    pub distances: Vec<f64>,
}

pub fn pairwise(state: &[f64], n: usize, d: usize) -> Result<Pairwise> {
    if state.len() != n * d {
        return input(format!("state of length {} is not N*d = {}", state.len(), n * d));
    }
    if state.iter().any(|x| !x.is_finite()) {
        return input("state contains non-finite coordinates");
    }
    let m = n * (n - 1) / 2;
    let mut out = Pairwise { pairs: Vec::with_capacity(m), displacements: Vec::with_capacity(m * d), distances: Vec::with_capacity(m) };
    for i in 0..n {
        for j in i + 1..n {
            let mut r2 = 0.0;
            for k in 0..d {
                let v = state[j * d + k] - state[i * d + k];
                out.displacements.push(v);
                r2 += v * v;
            }
            out.pairs.push((i, j));
            out.distances.push(r2.sqrt());
        }
    }
    Ok(out)
}

/// Visits every pair `i < j` with its distance; used by measure accumulation.
#[inline]
pub(crate) fn for_each_distance(state: &[f64], n: usize, d: usize, mut f: impl FnMut(f64)) {
    for i in 0..n {
        let xi = &state[i * d..(i + 1) * d];
        for j in i + 1..n {
            let xj = &state[j * d..(j + 1) * d];
            let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (b - a) * (b - a)).sum();
            f(r2.sqrt());
        }
    }
}

/// Drift `f_phi(X)_i = (1/N) sum_{j != i} phi(|x_j - x_i|) (x_j - x_i)` for an
/// arbitrary radial function, written into `out`.
#[inline]
pub fn drift_with(state: &[f64], n: usize, d: usize, phi: impl Fn(f64) -> f64, out: &mut [f64]) {
    out.fill(0.0);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let mut r2 = 0.0;
            for k in 0..d {
                let v = state[j * d + k] - state[i * d + k];
                r2 += v * v;
            }
            let w = phi(r2.sqrt()) * inv_n;
            if w == 0.0 {
                continue;
            }
            for k in 0..d {
                let f = w * (state[j * d + k] - state[i * d + k]);
                out[i * d + k] += f;
                out[j * d + k] -= f;
            }
        }
    }
}

pub fn drift(state: &[f64], n: usize, d: usize, kernel: &InteractionKernel) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    drift_with(state, n, d, |r| kernel.value(r), &mut out);
    out
}

/// One Euler-Maruyama step `X + f(X) dt + sigma sqrt(dt) W`.
pub fn em_step(state: &[f64], dt: f64, params: &SystemParams, increments: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return input(format!("time step must be positive, got {dt}"));
    }
    let width = params.n * params.d;
    if state.len() != width || increments.len() != width {
        return input("state and increments must both have N*d entries");
    }
    let mut f = vec![0.0; width];
    drift_with(state, params.n, params.d, |r| params.kernel.value(r), &mut f);
    let scale = params.sigma * dt.sqrt();
    Ok(state.iter().zip(&f).zip(increments).map(|((x, f), w)| x + f * dt + scale * w).collect())
}

/// Number of steps `L = T / dt`, required to be an integer.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("need positive T and dt, got T={horizon}, dt={dt}")));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * dt {
        return Err(Error::Config(format!("T = {horizon} is not an integer multiple of dt = {dt}")));
    }
    Ok(steps as usize)
}

pub fn simulate(params: &SystemParams, init: &InitialDistribution, horizon: f64, dt: f64, noise: NoiseStream) -> Result<Trajectory> {
    init.validate()?;
    let steps = step_count(horizon, dt)?;
    let mut gen = noise.generator();
    let mut x0 = vec![0.0; params.n * params.d];
    gen.initial_state(init, &mut x0);
    let states = integrate(params, &x0, steps, dt, &mut gen);
    let meta =
        TrajectoryMeta { seed: noise.seed, stream: noise.stream, sigma: params.sigma, kernel_id: params.kernel.id().to_string(), gap: 1 };
    Trajectory::new(params.n, params.d, dt, states, meta)
}

/// Advances `x0` by `steps` Euler-Maruyama steps drawing increments from `gen`.
pub(crate) fn integrate(params: &SystemParams, x0: &[f64], steps: usize, dt: f64, gen: &mut NoiseGenerator) -> Vec<f64> {
    let (n, d) = (params.n, params.d);
    let w = n * d;
    let mut states = Vec::with_capacity((steps + 1) * w);
    states.extend_from_slice(x0);
    let mut f = vec![0.0; w];
    let mut z = vec![0.0; w];
    let scale = params.sigma * dt.sqrt();
    for l in 0..steps {
        let cur = l * w;
        drift_with(&states[cur..cur + w], n, d, |r| params.kernel.value(r), &mut f);
        gen.fill_normal(&mut z);
        for k in 0..w {
            let next = states[cur + k] + f[k] * dt + scale * z[k];
            states.push(next);
        }
    }
    states
}

/// Simulates `count` trajectories on streams `first_stream..first_stream+count`.
pub fn simulate_many(
    params: &SystemParams,
    init: &InitialDistribution,
    horizon: f64,
    dt: f64,
    seed: u64,
    first_stream: u64,
    count: usize,
) -> Result<Vec<Trajectory>> {
    par::map_indexed(count, |m| simulate(params, init, horizon, dt, NoiseStream::new(seed, first_stream + m as u64))).into_iter().collect()
}

/// Keeps every `gap`-th state.
pub fn subsample(traj: &Trajectory, gap: usize) -> Result<Trajectory> {
    let steps = traj.steps();
    if gap == 0 || !steps.is_multiple_of(gap) {
        return input(format!("observation gap {gap} does not divide L = {steps}"));
    }
    let w = traj.n * traj.d;
    let mut states = Vec::with_capacity((steps / gap + 1) * w);
    for l in (0..=steps).step_by(gap) {
        states.extend_from_slice(traj.state(l));
    }
    let meta = TrajectoryMeta { gap: traj.meta.gap * gap, ..traj.meta.clone() };
    Ok(Trajectory { n: traj.n, d: traj.d, dt: traj.dt * gap as f64, states, meta })
}
