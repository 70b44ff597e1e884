//! Rao-Blackwellised particle filter on the latent utilities.
//!
//! Each particle carries a trajectory `z_{1:t}`; conditionally on it the state
//! model is linear-Gaussian, so `θ_t | z_{1:t}` is tracked by a Kalman filter.
//! The Kalman covariance does not depend on `z`, so it is shared. `z_t` is
//! proposed from its Kalman predictive restricted to the orthant implied by
//! `y_t`, and the weight is the probability of that orthant.

use super::optimal::check_inputs;
use super::particle::{resample_indices, ParticleCloud};
use super::{ln_orthant, PfConfig};
use crate::error::{Error, Result};
use crate::gauss::chol::{chol_solve_mat, chol_spd, symmetrize};
use crate::gauss::tmvn::trandn;
use crate::gauss::TruncatedMvn;
use crate::model::{signs, BinarySeries, ModelSpec};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Mixture `Σ_r w_r N(μ_r, P)` representing `p(θ_t | y_{1:t})`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbpfStep {
    pub t: usize,
    /// Kalman means, one row per particle.
    pub means: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub ess: f64,
}

impl RbpfStep {
    pub fn mean(&self) -> DVector<f64> {
        self.means.transpose() * &self.weights
    }

    /// Mixture covariance `P + Σ w μμᵀ - mean meanᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let p = m.len();
        let mut c = self.cov.clone();
        for i in 0..self.means.nrows() {
            let d = self.means.row(i).transpose() - &m;
            c += self.weights[i] * &d * d.transpose();
        }
        symmetrize(&c.view((0, 0), (p, p)).into_owned())
    }

    /// One draw per particle from its Gaussian component, keeping the weights.
    pub fn draw(&self, seed: u64) -> Result<ParticleCloud> {
        let l = chol_spd(&self.cov).map_err(|e| e.with_context("RBPF covariance"))?;
        let p = self.cov.nrows();
        let r = self.means.nrows();
        let rows: Vec<DVector<f64>> = (0..r)
            .into_par_iter()
            .map(|i| {
                let mut g = rng::substream(seed, i as u64);
                let z = DVector::from_fn(p, |_, _| g.sample::<f64, _>(StandardNormal));
                self.means.row(i).transpose() + &l * z
            })
            .collect();
        Ok(ParticleCloud {
            t: self.t,
            values: DMatrix::from_fn(r, p, |i, j| rows[i][j]),
            weights: self.weights.clone(),
            ess: self.ess,
            ancestry: None,
        })
    }
}

pub fn rb_pf(spec: &ModelSpec, y: &BinarySeries, cfg: &PfConfig, seed: u64) -> Result<Vec<RbpfStep>> {
    check_inputs(spec, y, cfg)?;
    let (r, p, m) = (cfg.r, spec.p, spec.m);
    let mut means = DMatrix::from_fn(r, p, |_, j| spec.a0[j]);
    let mut cov = spec.p0.clone();
    let mut lw_prev = vec![0.0; r];
    let mut out = Vec::with_capacity(spec.n);
    for t in 1..=spec.n {
        let (f, g) = (spec.f(t), spec.g(t));
        let pp = symmetrize(&(g * &cov * g.transpose() + spec.w(t)));
        let s = symmetrize(&(f * &pp * f.transpose() + spec.v(t)));
        let ls = chol_spd(&s).map_err(|e| e.with_context(format!("RBPF predictive covariance at t={t}")))?;
        // K = P⁻Fᵀ S⁻¹
        let gain = chol_solve_mat(&ls, &(f * &pp)).transpose();
        let b = signs(y.row(t))?;
        let bsb = DMatrix::from_fn(m, m, |a, c| b[a] * s[(a, c)] * b[c]);
        let step_seed = rng::derive(seed, &[t as u64, 0]);
        let res: Vec<(DVector<f64>, f64)> = (0..r)
            .into_par_iter()
            .map(|i| {
                let a = g * means.row(i).transpose();
                let fa = f * &a;
                let bfa = b.component_mul(&fa);
                let mut gen = rng::substream(step_seed, i as u64);
                // w = B(z - Fa) ~ N(0, BSB), w > -BFa
                let w = if m == 1 {
                    DVector::from_element(1, bsb[(0, 0)].sqrt() * trandn(-bfa[0] / bsb[(0, 0)].sqrt(), f64::INFINITY, &mut gen))
                } else {
                    TruncatedMvn::lower_orthant(&bsb, &(-&bfa), &cfg.tmvn)?.sample(&mut gen)?
                };
                let innov = b.component_mul(&w);
                let mu = a + &gain * innov;
                let lw = ln_orthant(&bfa, &bsb, &cfg.cdf, rng::derive(step_seed, &[i as u64]))?;
                Ok((mu, lw + lw_prev[i]))
            })
            .collect::<Result<_>>()?;
        cov = symmetrize(&(&pp - &gain * &s * gain.transpose()));
        let new_means = DMatrix::from_fn(r, p, |i, j| res[i].0[j]);
        let lw: Vec<f64> = res.iter().map(|x| x.1).collect();
        let cloud = ParticleCloud::from_log_weights(t, new_means, &lw).map_err(|_| Error::Degenerate { t })?;
        let step = RbpfStep {
            t,
            means: cloud.values.clone(),
            cov: cov.clone(),
            weights: cloud.weights.clone(),
            ess: cloud.ess,
        };
        let resample_now = match cfg.adaptive_ess {
            None => true,
            Some(frac) => cloud.ess < frac * r as f64,
        };
        if resample_now {
            let mut gen = rng::substream(rng::derive(seed, &[t as u64, 1]), 0);
            let idx = resample_indices(&cloud.weights, r, cfg.policy, &mut gen);
            means = cloud.values.select_rows(&idx);
            lw_prev = vec![0.0; r];
        } else {
            means = cloud.values;
            lw_prev = cloud.weights.iter().map(|w| w.ln()).collect();
        }
        out.push(step);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_weights_equal_at_zero_prior_mean() {
        let spec = ModelSpec::scalar(2, 0.0, 3.0, 0.1, 1.0, 1.0, 1.0);
        let y = BinarySeries::new(vec![vec![1], vec![0]]).unwrap();
        let run = rb_pf(&spec, &y, &PfConfig::with_r(200), 1).unwrap();
        assert!(run[0].weights.iter().all(|&w| (w - 1.0 / 200.0).abs() < 1e-15));
    }

    #[test]
    fn small_v_reduces_to_kalman_on_z() {
        // V → 0: each particle's update is a Kalman filter observing z exactly
        let spec = ModelSpec::scalar(1, 0.0, 2.0, 1.0, 1.0, 1.0, 1e-12);
        let y = BinarySeries::new(vec![vec![1]]).unwrap();
        let run = rb_pf(&spec, &y, &PfConfig::with_r(50), 4).unwrap();
        // P⁻ = 3, K = 3/(3+V) ≈ 1, posterior variance ≈ V
        assert!(run[0].cov[(0, 0)] < 1e-10);
        let draws = run[0].draw(1).unwrap();
        assert!(draws.values.iter().all(|&v| v > -1e-5));
    }

    #[test]
    fn multivariate_runs_deterministically() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, -0.5]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let spec = ModelSpec::time_invariant(3, f, v, DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 0.2, DVector::zeros(1), DMatrix::identity(1, 1));
        let y = BinarySeries::new(vec![vec![1, 0], vec![1, 1], vec![0, 1]]).unwrap();
        let a = rb_pf(&spec, &y, &PfConfig::with_r(100), 2).unwrap();
        let b = rb_pf(&spec, &y, &PfConfig::with_r(100), 2).unwrap();
        assert_eq!(a, b);
    }
}
