//! Weighted particle sets and resampling.

use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResamplePolicy {
    #[default]
    Systematic,
    Multinomial,
}

/// Particles `θ^{(r)}` (rows) with normalised weights at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    pub t: usize,
    pub values: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub ess: f64,
    pub ancestry: Option<Vec<usize>>,
}

impl ParticleCloud {
    /// Equally weighted cloud.
    pub fn uniform(t: usize, values: DMatrix<f64>) -> Self {
        let r = values.nrows();
        Self {
            t,
            values,
            weights: DVector::from_element(r, 1.0 / r as f64),
            ess: r as f64,
            ancestry: None,
        }
    }

    /// Cloud from unnormalised log-weights.
    pub fn from_log_weights(t: usize, values: DMatrix<f64>, log_w: &[f64]) -> Result<Self> {
        let weights = normalize_log_weights(log_w).ok_or(Error::Degenerate { t })?;
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        Ok(Self {
            t,
            values,
            weights,
            ess,
            ancestry: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.values.transpose() * &self.weights
    }

    /// Weighted per-coordinate variance.
    pub fn variance(&self) -> DVector<f64> {
        let m = self.mean();
        DVector::from_fn(self.dim(), |j, _| {
            (0..self.len())
                .map(|i| self.weights[i] * (self.values[(i, j)] - m[j]).powi(2))
                .sum()
        })
    }

    /// Monte Carlo standard error of the weighted mean of coordinate `j`,
    /// using the effective sample size.
    pub fn mean_se(&self) -> DVector<f64> {
        self.variance().map(|v| (v / self.ess).sqrt())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }
}

/// Normalised weights, or `None` if every weight is zero or non-finite.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<DVector<f64>> {
    let max = log_w.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_w
        .iter()
        .map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = w.iter().sum();
    Some(DVector::from_iterator(w.len(), w.into_iter().map(|v| v / s)))
}

/// Parent indices for `r` offspring.
pub fn resample_indices<R: Rng>(weights: &DVector<f64>, r: usize, policy: ResamplePolicy, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in weights.iter() {
        acc += w;
        cum.push(acc);
    }
    let total = acc;
    let pick = |u: f64| -> usize {
        let target = u * total;
        cum.partition_point(|&c| c <= target).min(n - 1)
    };
    match policy {
        ResamplePolicy::Systematic => {
            let u0: f64 = rng.random();
            (0..r).map(|i| pick((i as f64 + u0) / r as f64)).collect()
        }
        ResamplePolicy::Multinomial => (0..r).map(|_| pick(rng.random())).collect(),
    }
}

/// Draws `R` particles from `Σ w_l δ_{θ_l}`; output weights are uniform.
pub fn resample(cloud: &ParticleCloud, policy: ResamplePolicy, seed: u64) -> ParticleCloud {
    let mut g = rng::substream(seed, 0);
    let idx = resample_indices(&cloud.weights, cloud.len(), policy, &mut g);
    let values = cloud.values.select_rows(&idx);
    let mut out = ParticleCloud::uniform(cloud.t, values);
    out.ancestry = Some(idx);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(w: &[f64]) -> ParticleCloud {
        let n = w.len();
        let values = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        ParticleCloud::from_log_weights(1, values, &lw).unwrap()
    }

    #[test]
    fn systematic_with_uniform_weights_keeps_each_once() {
        let c = cloud(&[1.0; 7]);
        let out = resample(&c, ResamplePolicy::Systematic, 3);
        let mut anc = out.ancestry.clone().unwrap();
        anc.sort_unstable();
        assert_eq!(anc, (0..7).collect::<Vec<_>>());
        assert!((out.weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_collapse() {
        let c = cloud(&[0.0, 1.0, 0.0, 0.0]);
        for policy in [ResamplePolicy::Systematic, ResamplePolicy::Multinomial] {
            let out = resample(&c, policy, 5);
            assert!(out.values.iter().all(|&v| v == 1.0));
        }
        assert!((c.ess - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multinomial_offspring_expectation() {
        let w = [0.1, 0.5, 0.15, 0.25];
        let c = cloud(&w);
        let reps = 10_000;
        let mut counts = vec![Vec::with_capacity(reps); 4];
        for s in 0..reps {
            let out = resample(&c, ResamplePolicy::Multinomial, s as u64);
            let mut k = [0usize; 4];
            for &a in out.ancestry.as_ref().unwrap() {
                k[a] += 1;
            }
            for l in 0..4 {
                counts[l].push(k[l] as f64);
            }
        }
        for l in 0..4 {
            let mean = counts[l].iter().sum::<f64>() / reps as f64;
            // binomial(R, w) offspring count
            let se = (4.0 * w[l] * (1.0 - w[l]) / reps as f64).sqrt();
            assert!((mean - 4.0 * w[l]).abs() < 3.0 * se, "{l}: {mean}");
        }
    }

    #[test]
    fn all_zero_weights_are_degenerate() {
        let values = DMatrix::zeros(3, 1);
        let e = ParticleCloud::from_log_weights(4, values, &[f64::NEG_INFINITY; 3]).unwrap_err();
        assert!(matches!(e, Error::Degenerate { t: 4 }));
    }

    #[test]
    fn weight_invariants() {
        let c = cloud(&[0.3, 2.0, 0.7, 1.0, 0.01]);
        assert!((c.weights.sum() - 1.0).abs() < 1e-12);
        assert!(c.ess >= 1.0 && c.ess <= 5.0);
    }
}
