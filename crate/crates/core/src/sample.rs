//! Draw sets with provenance, and Monte Carlo summaries with jackknife errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Human-readable description of the target distribution.
    pub target: String,
    pub seed: u64,
    pub count: usize,
    /// False for correlated (Gibbs) draws.
    pub iid: bool,
}

/// `R` draws stored as rows of an `R × d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    pub values: DMatrix<f64>,
    pub provenance: Provenance,
}

impl SampleMatrix {
    pub fn from_rows(rows: &[DVector<f64>], target: impl Into<String>, seed: u64, iid: bool) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let values = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self {
            provenance: Provenance {
                target: target.into(),
                seed,
                count: rows.len(),
                iid,
            },
            values,
        }
    }

    pub fn count(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Columns `start..start + len` as a new sample (e.g. one time block of a path).
    pub fn block(&self, start: usize, len: usize, target: impl Into<String>) -> Self {
        Self {
            values: self.values.columns(start, len).into_owned(),
            provenance: Provenance {
                target: target.into(),
                ..self.provenance.clone()
            },
        }
    }

    pub fn moments(&self) -> Moments {
        Moments::from_rows(&self.values)
    }
}

/// Sample mean and covariance with jackknife standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    /// NaN when fewer than three draws are available.
    pub cov_se: DMatrix<f64>,
}

impl Moments {
    pub fn from_rows(x: &DMatrix<f64>) -> Self {
        let (r, d) = x.shape();
        let rf = r as f64;
        let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / rf);
        let centered = DMatrix::from_fn(r, d, |i, j| x[(i, j)] - mean[j]);
        let s = centered.transpose() * &centered;
        let cov = if r > 1 { &s / (rf - 1.0) } else { DMatrix::zeros(d, d) };
        // leave-one-out mean is affine in each draw, so its jackknife SE is sd / √R
        let mean_se = DVector::from_fn(d, |j, _| (cov[(j, j)] / rf).sqrt());
        // leave-one-out covariance C_(i) = (S - R/(R-1) d_i d_iᵀ) / (R-2)
        let cov_se = if r > 2 {
            let k = rf / ((rf - 1.0) * (rf - 2.0));
            DMatrix::from_fn(d, d, |a, b| {
                let u: Vec<f64> = (0..r).map(|i| centered[(i, a)] * centered[(i, b)]).collect();
                let ubar = u.iter().sum::<f64>() / rf;
                let ss: f64 = u.iter().map(|v| (v - ubar) * (v - ubar)).sum();
                ((rf - 1.0) / rf * k * k * ss).sqrt()
            })
        } else {
            DMatrix::from_element(d, d, f64::NAN)
        };
        Self {
            mean,
            cov,
            mean_se,
            cov_se,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force jackknife by actually leaving each draw out.
    fn jackknife_cov_se(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
        let r = x.nrows();
        let loo: Vec<f64> = (0..r)
            .map(|i| {
                let rows: Vec<usize> = (0..r).filter(|&k| k != i).collect();
                let sub = x.select_rows(&rows);
                Moments::from_rows(&sub).cov[(a, b)]
            })
            .collect();
        let m = loo.iter().sum::<f64>() / r as f64;
        ((r as f64 - 1.0) / r as f64 * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt()
    }

    #[test]
    fn analytic_jackknife_matches_brute_force() {
        let x = DMatrix::from_fn(17, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.37 - (j as f64));
        let m = Moments::from_rows(&x);
        for (a, b) in [(0, 0), (0, 1), (1, 1)] {
            let bf = jackknife_cov_se(&x, a, b);
            assert!((m.cov_se[(a, b)] - bf).abs() < 1e-12 * bf.max(1.0), "{a}{b}");
        }
        let sd = m.cov[(0, 0)].sqrt();
        assert!((m.mean_se[0] - sd / 17f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_samples_have_zero_error() {
        let x = DMatrix::from_element(10, 1, 2.5);
        let m = Moments::from_rows(&x);
        assert_eq!(m.mean[0], 2.5);
        assert_eq!(m.mean_se[0], 0.0);
        assert_eq!(m.cov_se[(0, 0)], 0.0);
    }
}
