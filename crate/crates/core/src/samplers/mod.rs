//! Monte Carlo engines: exact i.i.d. samplers, the optimal particle filter,
//! and the bootstrap, Rao-Blackwellised and Laplace-Gaussian baselines.

pub mod bootstrap;
pub mod ekf;
pub mod iid;
pub mod optimal;
pub mod particle;
pub mod rbpf;

pub use bootstrap::bootstrap_pf;
pub use ekf::{ekf, GaussianState};
pub use iid::{filtering_sampler, predictive_sampler, smoothing_sampler};
pub use optimal::optimal_pf;
pub use particle::{resample, ParticleCloud, ResamplePolicy};
pub use rbpf::{rb_pf, RbpfStep};

use crate::gauss::{CdfConfig, TmvnConfig};
use crate::rng;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfConfig {
    /// Number of particles.
    pub r: usize,
    pub policy: ResamplePolicy,
    /// Resample only when ESS falls below this fraction of `r`; `None` resamples every step.
    pub adaptive_ess: Option<f64>,
    pub cdf: CdfConfig,
    pub tmvn: TmvnConfig,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            r: 1000,
            policy: ResamplePolicy::Systematic,
            adaptive_ess: None,
            cdf: CdfConfig::default(),
            tmvn: TmvnConfig::default(),
        }
    }
}

impl PfConfig {
    pub fn with_r(r: usize) -> Self {
        Self {
            r,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PfDiagnostics {
    /// Particle-independent proposal factorisations built (optimal filter: one per step).
    pub kernel_builds: usize,
    pub resamples: usize,
}

/// Weighted clouds for `t = 1..=n`, each taken after weighting and before resampling.
#[derive(Clone, Debug)]
pub struct PfRun {
    pub clouds: Vec<ParticleCloud>,
    pub diagnostics: PfDiagnostics,
}

/// Carries a weighted cloud into the next step, resampling per configuration.
pub(crate) fn carry(cloud: &ParticleCloud, cfg: &PfConfig, seed: u64, diag: &mut PfDiagnostics) -> (DMatrix<f64>, Vec<f64>) {
    let r = cloud.len() as f64;
    let must = match cfg.adaptive_ess {
        None => true,
        Some(frac) => cloud.ess < frac * r,
    };
    if must {
        diag.resamples += 1;
        let out = resample(cloud, cfg.policy, rng::derive(seed, &[cloud.t as u64, 1]));
        (out.values, vec![0.0; cloud.len()])
    } else {
        let lw = cloud.weights.iter().map(|w| w.ln()).collect();
        (cloud.values.clone(), lw)
    }
}

/// `ln Φ_m(γ; Σ)` with a log-scale path for `m = 1`.
pub(crate) fn ln_orthant(gamma: &nalgebra::DVector<f64>, cov: &DMatrix<f64>, cfg: &CdfConfig, seed: u64) -> crate::Result<f64> {
    if gamma.len() == 1 {
        return Ok(crate::gauss::normal::ln_cdf(gamma[0] / cov[(0, 0)].sqrt()));
    }
    let e = crate::gauss::mvn_cdf_with(&cfg.problem(gamma.clone(), cov.clone()), cfg, seed)?;
    Ok(e.value.ln())
}
