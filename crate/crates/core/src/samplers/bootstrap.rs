//! Bootstrap particle filter: propose from the state transition, weight by the likelihood.

use super::optimal::{check_inputs, initial_particles};
use super::particle::ParticleCloud;
use super::{carry, ln_orthant, PfConfig, PfDiagnostics, PfRun};
use crate::error::Result;
use crate::gauss::chol::chol_spd;
use crate::model::{signs, BinarySeries, ModelSpec};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// `p(y_t | θ) = Φ_m(B F θ; B V B)` on the log scale.
pub fn ln_likelihood(spec: &ModelSpec, t: usize, b: &DVector<f64>, theta: &DVector<f64>, cfg: &super::CdfConfig, seed: u64) -> Result<f64> {
    let m = spec.m;
    let mean = DVector::from_fn(m, |l, _| b[l] * (spec.f(t).row(l) * theta)[(0, 0)]);
    let cov = DMatrix::from_fn(m, m, |a, c| b[a] * spec.v(t)[(a, c)] * b[c]);
    ln_orthant(&mean, &cov, cfg, seed)
}

pub fn bootstrap_pf(spec: &ModelSpec, y: &BinarySeries, cfg: &PfConfig, seed: u64) -> Result<PfRun> {
    check_inputs(spec, y, cfg)?;
    let (r, p) = (cfg.r, spec.p);
    let mut diag = PfDiagnostics::default();
    let mut prev = initial_particles(spec, r, rng::derive(seed, &[0]))?;
    let mut prev_lw = vec![0.0; r];
    let mut clouds = Vec::with_capacity(spec.n);
    for t in 1..=spec.n {
        let lw_chol = chol_spd(spec.w(t)).map_err(|e| e.with_context(format!("W[t={t}]")))?;
        let b = signs(y.row(t))?;
        let step_seed = rng::derive(seed, &[t as u64, 0]);
        let out: Vec<(DVector<f64>, f64)> = (0..r)
            .into_par_iter()
            .map(|i| {
                let mut g = rng::substream(step_seed, i as u64);
                let e = DVector::from_fn(p, |_, _| g.sample::<f64, _>(StandardNormal));
                let th = spec.g(t) * prev.row(i).transpose() + &lw_chol * e;
                let lw = ln_likelihood(spec, t, &b, &th, &cfg.cdf, rng::derive(step_seed, &[i as u64]))?;
                Ok((th, lw + prev_lw[i]))
            })
            .collect::<Result<_>>()?;
        let values = DMatrix::from_fn(r, p, |i, j| out[i].0[j]);
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
