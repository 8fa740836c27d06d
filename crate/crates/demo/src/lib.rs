//! WebAssembly bindings for the browser demo in `www/`.

use ipsk_core::estimator::{estimate, EstimatorConfig};
use ipsk_core::eval::kernel_error;
use ipsk_core::hypospace::PartitionMode;
use ipsk_core::measure::empirical_rho;
use ipsk_core::model::{InitialDistribution, InteractionKernel, SystemParams};
use ipsk_core::sim::{simulate, simulate_many, NoiseStream, Trajectory};
use wasm_bindgen::prelude::*;

const N: usize = 10;
const DT: f64 = 0.01;
const CURVE_POINTS: usize = 400;

fn opinion_params(sigma: f64) -> ipsk_core::Result<SystemParams> {
    SystemParams::new(N, 1, sigma, InteractionKernel::opinion())
}

fn opinion_init() -> InitialDistribution {
    InitialDistribution::UniformBox { lo: 0.0, hi: 8.0 }
}

fn js(e: ipsk_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Opinion-dynamics kernel sampled on `[0, r_max]`, as interleaved `(r, phi)` pairs.
#[wasm_bindgen]
pub fn kernel_curve(r_max: f64, points: usize) -> Vec<f64> {
    let kernel = InteractionKernel::opinion();
    let points = points.max(2);
    (0..points)
        .flat_map(|k| {
            let r = r_max * k as f64 / (points - 1) as f64;
            [r, kernel.value(r)]
        })
        .collect()
}

fn opinions(sigma: f64, horizon: f64, seed: u64) -> ipsk_core::Result<Trajectory> {
    simulate(&opinion_params(sigma)?, &opinion_init(), horizon, DT, NoiseStream::new(seed, 0))
}

/// One opinion-dynamics trajectory of ten agents; states are row-major in time.
#[wasm_bindgen]
pub fn simulate_opinions(sigma: f64, horizon: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    opinions(sigma, horizon, seed).map(|t| t.states().to_vec()).map_err(js)
}

/// Estimated kernel next to the true one on a common grid.
#[wasm_bindgen]
pub struct Fit {
    r: Vec<f64>,
    estimate: Vec<f64>,
    truth: Vec<f64>,
    error: f64,
    cells: usize,
}

#[wasm_bindgen]
impl Fit {
    #[wasm_bindgen(getter)]
    pub fn r(&self) -> Vec<f64> {
        self.r.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn estimate(&self) -> Vec<f64> {
        self.estimate.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    /// Error in the distance-weighted norm of the data.
    #[wasm_bindgen(getter)]
    pub fn error(&self) -> f64 {
        self.error
    }

    #[wasm_bindgen(getter)]
    pub fn cells(&self) -> usize {
        self.cells
    }
}

fn fit(m: usize, sigma: f64, seed: u64) -> ipsk_core::Result<Fit> {
    let params = opinion_params(sigma)?;
    let trajs = simulate_many(&params, &opinion_init(), 5.0, DT, seed, 0, m)?;
    let config = EstimatorConfig { mode: PartitionMode::Uniform, ..EstimatorConfig::new(0, 40.0) };
    let est = estimate(&trajs, &config)?;
    let rho = empirical_rho(&trajs, 1000)?;
    let error = kernel_error(&est.kernel, &params.kernel, &rho);
    let (lo, hi) = est.kernel.basis.support();
    let r: Vec<f64> = (0..CURVE_POINTS).map(|k| lo + (hi - lo) * k as f64 / (CURVE_POINTS - 1) as f64).collect();
    let estimate = r.iter().map(|&x| est.kernel.raw().value(x)).collect();
    let truth = r.iter().map(|&x| params.kernel.value(x)).collect();
    Ok(Fit { r, estimate, truth, error, cells: est.diagnostics.cells })
}

/// Learns the kernel from `m` simulated trajectories on `[0, 5]`.
#[wasm_bindgen]
pub fn learn_kernel(m: usize, sigma: f64, seed: u64) -> Result<Fit, JsError> {
    fit(m, sigma, seed).map_err(js)
}
