//! Exact independent draws from smoothing, filtering and predictive distributions.

use crate::error::{Error, Result};
use crate::filter::run_filter;
use crate::gauss::chol::chol_spd;
use crate::gauss::TmvnConfig;
use crate::model::{BinarySeries, ModelSpec};
use crate::rng;
use crate::sample::SampleMatrix;
use crate::smoother::joint_smoothing;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// `R` draws of the whole path `θ_{1:n}` (columns ordered by time, then coordinate).
pub fn smoothing_sampler(spec: &ModelSpec, y: &BinarySeries, r: usize, seed: u64, tcfg: &TmvnConfig) -> Result<SampleMatrix> {
    let mut out = joint_smoothing(spec, y)?.sample(r, seed, tcfg)?;
    out.provenance.target = format!("smoothing theta_1:{}", spec.n);
    Ok(out)
}

/// `R` draws of `θ_t | y_{1:t}`, sampled from the filtering SUN, which is the
/// time-`t` block of the smoothing distribution with horizon `t`.
pub fn filtering_sampler(spec: &ModelSpec, y: &BinarySeries, t: usize, r: usize, seed: u64, tcfg: &TmvnConfig) -> Result<SampleMatrix> {
    if t == 0 || t > spec.n {
        return Err(Error::Validation(format!("time index {t} outside 1..={}", spec.n)));
    }
    y.check_against(spec)?;
    let params = run_filter(spec, &y.y, t)?;
    let mut out = params.sample(r, seed, tcfg)?;
    out.provenance.target = format!("filtering theta_{t}");
    Ok(out)
}

/// `R` draws of `θ_{t+1} | y_{1:t}` by propagating filtering draws through the state equation.
pub fn predictive_sampler(spec: &ModelSpec, y: &BinarySeries, t: usize, r: usize, seed: u64, tcfg: &TmvnConfig) -> Result<SampleMatrix> {
    if t >= spec.n {
        return Err(Error::Validation(format!(
            "prediction of t={} needs system matrices beyond horizon {}",
            t + 1,
            spec.n
        )));
    }
    let filt = filtering_sampler(spec, y, t, r, rng::derive(seed, &[0]), tcfg)?;
    let g = spec.g(t + 1);
    let lw = chol_spd(spec.w(t + 1)).map_err(|e| e.with_context(format!("W[t={}]", t + 1)))?;
    let noise_seed = rng::derive(seed, &[1]);
    let p = spec.p;
    let rows: Vec<DVector<f64>> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut gen = rng::substream(noise_seed, i as u64);
            let e = DVector::from_fn(p, |_, _| gen.sample::<f64, _>(StandardNormal));
            let th = filt.values.row(i).transpose();
            g * th + &lw * e
        })
        .collect();
    Ok(SampleMatrix::from_rows(&rows, format!("predictive theta_{}", t + 1), seed, filt.provenance.iid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::init_filter;

    fn scalar(n: usize) -> ModelSpec {
        ModelSpec::scalar(n, 0.0, 1.0, 2.0, 1.0, 1.0, 1.0)
    }

    #[test]
    fn n1_smoothing_matches_sun_sample() {
        let spec = scalar(1);
        let y = BinarySeries::new(vec![vec![1]]).unwrap();
        let t = TmvnConfig::default();
        let a = smoothing_sampler(&spec, &y, 200, 5, &t).unwrap();
        let b = init_filter(&spec, &[1]).unwrap().sample(200, 5, &t).unwrap();
        assert!((a.values - b.values).amax() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let spec = scalar(3);
        let y = BinarySeries::new(vec![vec![1], vec![0], vec![1]]).unwrap();
        let t = TmvnConfig::default();
        let a = smoothing_sampler(&spec, &y, 100, 9, &t).unwrap();
        let b = smoothing_sampler(&spec, &y, 100, 9, &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filtering_mean_first_step() {
        let spec = scalar(2);
        let y = BinarySeries::new(vec![vec![1], vec![1]]).unwrap();
        let m = filtering_sampler(&spec, &y, 1, 100_000, 2, &TmvnConfig::default()).unwrap().moments();
        assert!((m.mean[0] - 1.196_83).abs() < 3.0 * m.mean_se[0], "{}", m.mean[0]);
    }

    #[test]
    fn predictive_linearity() {
        let mut spec = ModelSpec::scalar(3, 0.0, 1.0, 0.5, 1.0, 0.8, 1.0);
        spec.w[1] = nalgebra::DMatrix::from_element(1, 1, 0.3);
        let y = BinarySeries::new(vec![vec![1], vec![0], vec![1]]).unwrap();
        let t = TmvnConfig::default();
        let r = 50_000;
        let filt = filtering_sampler(&spec, &y, 1, r, rng::derive(7, &[0]), &t).unwrap().moments();
        let pred = predictive_sampler(&spec, &y, 1, r, 7, &t).unwrap().moments();
        // predictive draws reuse the filtering draws, so compare against the same sample
        assert!((pred.mean[0] - 0.8 * filt.mean[0]).abs() < 3.0 * pred.mean_se[0]);
        let expect_var = 0.64 * filt.cov[(0, 0)] + 0.3;
        assert!((pred.cov[(0, 0)] - expect_var).abs() < 3.0 * pred.cov_se[(0, 0)]);
    }
}
