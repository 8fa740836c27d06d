//! Experiment configuration and the built-in presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{DimensionChoice, EstimatorConfig};
use crate::hypospace::PartitionMode;
use crate::measure::DEFAULT_BINS;
use crate::model::{InitialDistribution, InteractionKernel, SystemParams};
use crate::sim::step_count;

pub const ENV_SEED: &str = "IPSK_SEED";
pub const ENV_OUT: &str = "IPSK_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Opinion,
    LennardJones { p: f64, q: f64, eps: f64, r_m: f64, r_trunc: f64, radius: f64 },
    Constant { value: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> Result<InteractionKernel> {
        match *self {
            Self::Opinion => Ok(InteractionKernel::opinion()),
            Self::LennardJones { p, q, eps, r_m, r_trunc, radius } => {
                InteractionKernel::lennard_jones(p, q, eps, r_m, r_trunc, radius).map_err(|e| Error::Config(e.to_string()))
            }
            Self::Constant { value } if value.is_finite() => Ok(InteractionKernel::constant(value)),
            Self::Constant { value } => Err(Error::Config(format!("constant kernel value {value} is not finite"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub kernel: KernelSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTimeConfig {
    /// `(M, T)` pairs.
    pub grid: Vec<(usize, f64)>,
    /// Constant of the `M T / dt` dimension rule.
    pub c: f64,
    /// Trajectories of length `max T` behind the reference measure.
    pub m_rho: usize,
    /// Partition used instead of the estimator's own.
    #[serde(default)]
    pub mode: Option<PartitionMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub m_list: Vec<usize>,
    pub replicates: usize,
    pub gap_list: Vec<usize>,
    pub sigma_list: Vec<f64>,
    /// Trajectories per gap-study dataset.
    pub gap_m: usize,
    pub long_t: Option<LongTimeConfig>,
    /// Fresh initial conditions used to score trajectory prediction.
    pub prediction_ics: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { m_list: Vec::new(), replicates: 1, gap_list: vec![1], sigma_list: Vec::new(), gap_m: 0, long_t: None, prediction_ics: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub init: InitialDistribution,
    pub dt: f64,
    /// Training horizon.
    pub t: f64,
    /// Prediction horizon.
    pub t_f: f64,
    /// Trajectories for `simulate` and the prediction estimator.
    pub m: usize,
    /// Trajectories behind the reference measure used for scoring.
    pub m_rho: usize,
    #[serde(default = "default_bins")]
    pub rho_bins: usize,
    pub basis: EstimatorConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Opinion,
    LennardJones,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Full,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::new(self.system.n, self.system.d, self.system.sigma, self.system.kernel.build()?)
    }

    pub fn steps(&self) -> Result<usize> {
        step_count(self.t, self.dt)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.init.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(bad(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t > 0.0 && self.t_f >= self.t && self.t_f.is_finite()) {
            return Err(bad(format!("need 0 < T <= T_f, got T = {}, T_f = {}", self.t, self.t_f)));
        }
        let steps = self.steps()?;
        step_count(self.t_f, self.dt)?;
        if self.m == 0 || self.m_rho == 0 || self.rho_bins == 0 {
            return Err(bad("M, M_rho and rho_bins must be positive"));
        }
        self.basis.validate()?;
        let s = &self.study;
        if s.replicates == 0 {
            return Err(bad("replicates must be at least 1"));
        }
        if s.m_list.windows(2).any(|w| w[0] >= w[1]) || s.m_list.contains(&0) {
            return Err(bad("M list must be positive and strictly increasing"));
        }
        if let Some(&g) = s.gap_list.iter().find(|&&g| g == 0 || steps % g != 0) {
            return Err(bad(format!("observation gap {g} does not divide L = {steps}")));
        }
        if s.sigma_list.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(bad("noise levels must be finite and nonnegative"));
        }
        if let Some(lt) = &s.long_t {
            if !(lt.c > 0.0) || lt.m_rho == 0 {
                return Err(bad("long-trajectory study needs C > 0 and M_rho > 0"));
            }
            for &(m, t) in &lt.grid {
                if m == 0 {
                    return Err(bad("long-trajectory grid needs M >= 1"));
                }
                step_count(t, self.dt)?;
            }
        }
        Ok(())
    }

    /// Applies `IPSK_SEED` and `IPSK_OUT` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(ENV_SEED) {
            self.seed = v.trim().parse().map_err(|_| bad(format!("{ENV_SEED} is not a u64: {v:?}")))?;
        }
        if let Ok(v) = std::env::var(ENV_OUT) {
            self.out = Some(PathBuf::from(v));
        }
        Ok(())
    }

    pub fn preset(target: Target, scale: Scale) -> Self {
        match target {
            Target::Opinion => opinion(scale),
            Target::LennardJones => lennard_jones(scale),
        }
    }
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

/// Opinion dynamics: `N = 10`, `d = 1`, `dt = 0.01`, `T = 5`, `T_f = 50`,
/// initial opinions uniform on `[0, 8]`, piecewise-constant estimator.
pub fn opinion(scale: Scale) -> ExperimentConfig {
    let full = scale == Scale::Full;
    ExperimentConfig {
        system: SystemSpec { n: 10, d: 1, sigma: 0.1, kernel: KernelSpec::Opinion },
        init: InitialDistribution::UniformBox { lo: 0.0, hi: 8.0 },
        dt: 0.01,
        t: 5.0,
        t_f: 50.0,
        m: if full { 4096 } else { 1024 },
        m_rho: if full { 50_000 } else { 10_000 },
        rho_bins: DEFAULT_BINS,
        basis: EstimatorConfig { mode: PartitionMode::Uniform, dimension: DimensionChoice::Trajectories, ..EstimatorConfig::new(0, 40.0) },
        study: StudyConfig {
            m_list: if full { powers_of_two(5, 12) } else { powers_of_two(5, 10) },
            replicates: if full { 10 } else { 5 },
            gap_list: vec![1, 2, 4, 5, 10, 20, 25, 50, 100],
            sigma_list: if full { vec![0.1, 0.3, 0.5] } else { vec![0.1, 0.5] },
            gap_m: 1024,
            long_t: Some(LongTimeConfig {
                grid: if full {
                    vec![(1, 100.0), (1, 300.0), (2, 500.0), (4, 750.0), (8, 1500.0)]
                } else {
                    vec![(1, 50.0), (1, 100.0), (2, 150.0), (2, 300.0), (4, 400.0), (4, 750.0)]
                },
                c: 4.0,
                m_rho: if full { 256 } else { 64 },
                mode: Some(PartitionMode::RhoAdaptive),
            }),
            prediction_ics: if full { 4096 } else { 1024 },
        },
        seed: 20_200_101,
        out: None,
    }
}

/// Stochastic Lennard-Jones: `p = 8`, `q = 2`, `eps = 1`, `r_m = 1`,
/// truncated below `0.95`; `N = 10`, `d = 2`, `dt = 0.001`, `T = 0.5`,
/// `T_f = 20`, standard normal initial positions, piecewise-linear estimator
/// on equal-mass cells.
pub fn lennard_jones(scale: Scale) -> ExperimentConfig {
    let full = scale == Scale::Full;
    ExperimentConfig {
        system: SystemSpec {
            n: 10,
            d: 2,
            sigma: 0.05,
            kernel: KernelSpec::LennardJones { p: 8.0, q: 2.0, eps: 1.0, r_m: 1.0, r_trunc: 0.95, radius: 10.0 },
        },
        init: InitialDistribution::IsotropicGaussian { mean: 0.0, scale: 1.0 },
        dt: 0.001,
        t: 0.5,
        t_f: 20.0,
        m: if full { 4096 } else { 1024 },
        m_rho: if full { 50_000 } else { 10_000 },
        rho_bins: DEFAULT_BINS,
        basis: EstimatorConfig {
            mode: PartitionMode::RhoAdaptive,
            dimension: DimensionChoice::Trajectories,
            ..EstimatorConfig::new(1, 30.0)
        },
        study: StudyConfig {
            m_list: if full { powers_of_two(5, 12) } else { powers_of_two(5, 10) },
            replicates: if full { 10 } else { 5 },
            gap_list: vec![1, 2, 4, 5, 10, 20, 25, 50, 100],
            sigma_list: vec![0.05, 0.25],
            gap_m: 1024,
            long_t: None,
            prediction_ics: if full { 4096 } else { 1024 },
        },
        seed: 20_200_102,
        out: None,
    }
}
