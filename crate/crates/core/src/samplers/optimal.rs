//! Particle filter with the optimal importance density `p(θ_t | θ_{t-1}, y_t)`.

use super::particle::ParticleCloud;
use super::{carry, ln_orthant, PfConfig, PfDiagnostics, PfRun};
use crate::error::{Error, Result};
use crate::filter::OptimalKernel;
use crate::gauss::chol::chol_spd;
use crate::model::{BinarySeries, ModelSpec};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Initial particles `θ_0^{(r)} ~ N(a0, P0)`.
pub(crate) fn initial_particles(spec: &ModelSpec, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    let l = chol_spd(&spec.p0).map_err(|e| e.with_context("P0"))?;
    let p = spec.p;
    let rows: Vec<DVector<f64>> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::substream(seed, i as u64);
            let z = DVector::from_fn(p, |_, _| g.sample::<f64, _>(StandardNormal));
            &spec.a0 + &l * z
        })
        .collect();
    Ok(DMatrix::from_fn(r, p, |i, j| rows[i][j]))
}

pub(crate) fn check_inputs(spec: &ModelSpec, y: &BinarySeries, cfg: &PfConfig) -> Result<()> {
    spec.check()?;
    y.check_against(spec)?;
    if cfg.r < 2 {
        return Err(Error::Validation("particle filters need at least 2 particles".into()));
    }
    Ok(())
}

/// Propose from the optimal density, weight by `Φ_m(γ_t; Γ_t)`, resample.
pub fn optimal_pf(spec: &ModelSpec, y: &BinarySeries, cfg: &PfConfig, seed: u64) -> Result<PfRun> {
    check_inputs(spec, y, cfg)?;
    let r = cfg.r;
    let mut diag = PfDiagnostics::default();
    let mut prev = initial_particles(spec, r, rng::derive(seed, &[0]))?;
    let mut prev_lw = vec![0.0; r];
    let mut clouds = Vec::with_capacity(spec.n);
    for t in 1..=spec.n {
        let kernel = OptimalKernel::new(spec, y.row(t), t, &cfg.tmvn)?;
        diag.kernel_builds += 1;
        let step_seed = rng::derive(seed, &[t as u64, 0]);
        let out: Vec<(DVector<f64>, f64)> = (0..r)
            .into_par_iter()
            .map(|i| {
                let th = prev.row(i).transpose();
                let (xi, gamma) = kernel.location(&th);
                let mut g = rng::substream(step_seed, i as u64);
                let draw = kernel.draw(&xi, &gamma, &mut g)?;
                let lw = ln_orthant(&gamma, kernel.big_gamma(), &cfg.cdf, rng::derive(step_seed, &[i as u64]))?;
                Ok((draw, lw + prev_lw[i]))
            })
            .collect::<Result<_>>()?;
        let values = DMatrix::from_fn(r, spec.p, |i, j| out[i].0[j]);
        let lw: Vec<f64> = out.iter().map(|o| o.1).collect();
        let cloud = ParticleCloud::from_log_weights(t, values, &lw)?;
        (prev, prev_lw) = carry(&cloud, cfg, seed, &mut diag);
        clouds.push(cloud);
    }
    Ok(PfRun {
        clouds,
        diagnostics: diag,
    })
}
