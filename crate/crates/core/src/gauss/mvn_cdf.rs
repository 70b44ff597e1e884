//! Gaussian orthant probabilities `Φ_h(γ; Γ) = P(X ≤ γ)`, `X ~ N_h(0, Γ)`.
//!
//! One and two dimensions are evaluated deterministically (closed form and
//! Gauss–Legendre quadrature of the bivariate normal). From three dimensions
//! on, the integral is transformed by sequential conditioning with variable
//! reordering and integrated by randomized quasi-Monte Carlo on a Kronecker
//! lattice with independent random shifts; the reported standard error is
//! the spread across shifts.

use super::chol::min_eigenvalue;
use super::normal;
use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Accuracy and budget parameters of the quasi-Monte Carlo path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfConfig {
    /// Independent random shifts of the lattice.
    pub shifts: usize,
    /// Lattice points per shift in the first pass (each also used antithetically).
    pub initial_points: usize,
    /// Upper bound on lattice points per shift after doubling.
    pub max_points: usize,
    /// Target relative error, `3·se ≤ rel_tol·estimate`.
    pub rel_tol: f64,
    /// Largest dimension accepted.
    pub max_dim: usize,
    /// Most negative eigenvalue tolerated on the correlation scale.
    pub psd_floor: f64,
}

impl Default for CdfConfig {
    fn default() -> Self {
        Self {
            shifts: 12,
            initial_points: 500,
            max_points: 16_000,
            rel_tol: 1e-4,
            max_dim: 1000,
            psd_floor: 1e-10,
        }
    }
}

impl CdfConfig {
    /// A cheaper setting for bulk evaluations (density grids, weights).
    pub fn fast() -> Self {
        Self {
            initial_points: 250,
            max_points: 250,
            ..Self::default()
        }
    }

    pub fn problem(&self, gamma: DVector<f64>, cov: DMatrix<f64>) -> OrthantProblem {
        OrthantProblem {
            gamma,
            cov,
            rel_tol: self.rel_tol,
        }
    }
}

/// Upper limits and covariance (or correlation) of an orthant probability.
#[derive(Clone, Debug)]
pub struct OrthantProblem {
    pub gamma: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub rel_tol: f64,
}

impl OrthantProblem {
    pub fn new(gamma: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            gamma,
            cov,
            rel_tol: CdfConfig::default().rel_tol,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl CdfEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

/// `Φ_h(γ; Γ)` with the default budget.
pub fn mvn_cdf(problem: &OrthantProblem, seed: u64) -> Result<CdfEstimate> {
    let cfg = CdfConfig {
        rel_tol: problem.rel_tol,
        ..CdfConfig::default()
    };
    mvn_cdf_with(problem, &cfg, seed)
}

/// `Φ_h(γ; Γ)` under an explicit budget; `problem.rel_tol` overrides `cfg.rel_tol`.
pub fn mvn_cdf_with(problem: &OrthantProblem, cfg: &CdfConfig, seed: u64) -> Result<CdfEstimate> {
    let h = problem.dim();
    if h == 0 {
        return Err(Error::Dimension("orthant probability needs h >= 1".into()));
    }
    if problem.cov.nrows() != h || problem.cov.ncols() != h {
        return Err(Error::Dimension(format!(
            "limits have length {h} but covariance is {}x{}",
            problem.cov.nrows(),
            problem.cov.ncols()
        )));
    }
    if h > cfg.max_dim {
        return Err(Error::Dimension(format!(
            "orthant dimension {h} exceeds cap {}",
            cfg.max_dim
        )));
    }
    if problem.gamma.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN integration limit".into()));
    }
    if problem.gamma.iter().any(|&v| v == f64::NEG_INFINITY) {
        return Ok(CdfEstimate::exact(0.0));
    }

    // +inf limits integrate out
    let keep: Vec<usize> = (0..h).filter(|&i| problem.gamma[i].is_finite()).collect();
    if keep.is_empty() {
        return Ok(CdfEstimate::exact(1.0));
    }
    let k = keep.len();
    let mut sd = Vec::with_capacity(k);
    for &i in &keep {
        let v = problem.cov[(i, i)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Matrix(format!(
                "covariance diagonal entry {i} must be strictly positive, got {v}"
            )));
        }
        sd.push(v.sqrt());
    }
    let b: Vec<f64> = keep
        .iter()
        .zip(&sd)
        .map(|(&i, s)| problem.gamma[i] / s)
        .collect();
    let corr = DMatrix::from_fn(k, k, |r, c| {
        problem.cov[(keep[r], keep[c])] / (sd[r] * sd[c])
    });
    for r in 0..k {
        for c in 0..r {
            if (corr[(r, c)] - corr[(c, r)]).abs() > 1e-9 {
                return Err(Error::Matrix(format!("covariance not symmetric at ({r}, {c})")));
            }
        }
    }

    match k {
        1 => Ok(CdfEstimate::exact(normal::cdf(b[0]))),
        2 => {
            let rho = corr[(1, 0)];
            if rho.abs() > 1.0 + 1e-12 {
                return Err(Error::Matrix(format!("correlation {rho} outside [-1, 1]")));
            }
            Ok(CdfEstimate::exact(bvn_cdf(b[0], b[1], rho.clamp(-1.0, 1.0))))
        }
        _ => {
            let lambda = min_eigenvalue(&corr);
            if lambda < -cfg.psd_floor {
                return Err(Error::Matrix(format!(
                    "covariance not positive semi-definite (min eigenvalue {lambda:e})"
                )));
            }
            let tol = problem.rel_tol;
            Ok(sov_qmc(&b, &corr, cfg, tol, seed))
        }
    }
}

/// Bivariate standard normal CDF `P(X ≤ a, Y ≤ b)` with correlation `rho`.
pub fn bvn_cdf(a: f64, b: f64, rho: f64) -> f64 {
    bvn_upper(-a, -b, rho)
}

// Gauss–Legendre nodes/weights on [-1, 1] (positive half), 6, 12 and 20 points.
const GL6_W: [f64; 3] = [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4];
const GL6_X: [f64; 3] = [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197_0];
const GL12_W: [f64; 6] = [
    0.047_175_336_386_511_77,
    0.106_939_325_995_318_3,
    0.160_078_328_543_346_4,
    0.203_167_426_723_065_9,
    0.233_492_536_538_354_7,
    0.249_147_045_813_402_9,
];
const GL12_X: [f64; 6] = [
    0.981_560_634_246_719_1,
    0.904_117_256_370_475_0,
    0.769_902_674_194_305_0,
    0.587_317_954_286_617_1,
    0.367_831_498_998_180_2,
    0.125_233_408_511_469_2,
];
const GL20_W: [f64; 10] = [
    0.017_614_007_139_152_12,
    0.040_601_429_800_386_94,
    0.062_672_048_334_109_06,
    0.083_276_741_576_704_75,
    0.101_930_119_817_240_4,
    0.118_194_531_961_518_4,
    0.131_688_638_449_176_6,
    0.142_096_109_318_382_1,
    0.149_172_986_472_603_7,
    0.152_753_387_130_725_9,
];
const GL20_X: [f64; 10] = [
    0.993_128_599_185_094_9,
    0.963_971_927_277_913_8,
    0.912_234_428_251_325_9,
    0.839_116_971_822_218_8,
    0.746_331_906_460_150_8,
    0.636_053_680_726_515_0,
    0.510_867_001_950_827_1,
    0.373_706_088_715_419_6,
    0.227_785_851_141_645_1,
    0.076_526_521_133_497_33,
];

/// `P(X > dh, Y > dk)` for standard bivariate normal with correlation `r`
/// (Drezner–Wesolowsky with Genz's refinements).
fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    if dh == f64::INFINITY || dk == f64::INFINITY {
        return 0.0;
    }
    if dh == f64::NEG_INFINITY {
        return if dk == f64::NEG_INFINITY { 1.0 } else { normal::sf(dk) };
    }
    if dk == f64::NEG_INFINITY {
        return normal::sf(dh);
    }
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GL6_W, &GL6_X)
    } else if r.abs() < 0.75 {
        (&GL12_W, &GL12_X)
    } else {
        (&GL20_W, &GL20_X)
    };
    let (h, mut k) = (dh, dk);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for (&wi, &xi) in w.iter().zip(x) {
            for node in [1.0 - xi, 1.0 + xi] {
                let sn = (asr * node).sin();
                bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (2.0 * PI) + normal::sf(h) * normal::sf(k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = (2.0 * PI).sqrt() * normal::cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            let mut acc = 0.0;
            for (&wi, &xi) in w.iter().zip(x) {
                for node in [1.0 - xi, 1.0 + xi] {
                    let xs = (a * node) * (a * node);
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        acc += wi * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * acc - bvn) / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += normal::sf(h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                normal::cdf(k) - normal::cdf(h)
            } else {
                normal::sf(h) - normal::sf(k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Packed lower-triangular Cholesky factor in integration order.
struct Ordered {
    b: Vec<f64>,
    /// row-major packed lower triangle, row i has i+1 entries
    chol: Vec<f64>,
    diag: Vec<f64>,
}

impl Ordered {
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.chol[start..start + i]
    }
}

/// Cholesky with greedy reordering: at each step integrate the variable with
/// the smallest conditional probability, conditioning earlier variables on
/// their truncated means.
fn reorder(b: &[f64], corr: &DMatrix<f64>) -> Ordered {
    let n = b.len();
    let mut sigma = corr.clone();
    let mut b = b.to_vec();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut y = vec![0.0; n];
    let tiny = 1e-12;
    for i in 0..n {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..n {
            let mut var = sigma[(j, j)];
            let mut mean = 0.0;
            for k in 0..i {
                var -= l[(j, k)] * l[(j, k)];
                mean += l[(j, k)] * y[k];
            }
            let p = if var > tiny {
                normal::cdf((b[j] - mean) / var.sqrt())
            } else if b[j] - mean >= 0.0 {
                1.0
            } else {
                0.0
            };
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            sigma.swap_rows(i, best);
            sigma.swap_columns(i, best);
            l.swap_rows(i, best);
            b.swap(i, best);
        }
        let mut var = sigma[(i, i)];
        for k in 0..i {
            var -= l[(i, k)] * l[(i, k)];
        }
        if var > tiny {
            let d = var.sqrt();
            l[(i, i)] = d;
            for j in (i + 1)..n {
                let mut s = sigma[(j, i)];
                for k in 0..i {
                    s -= l[(j, k)] * l[(i, k)];
                }
                l[(j, i)] = s / d;
            }
            let mut mean = 0.0;
            for k in 0..i {
                mean += l[(i, k)] * y[k];
            }
            let t = (b[i] - mean) / d;
            // E[Z | Z < t]
            y[i] = -normal::inv_mills(t);
        } else {
            l[(i, i)] = 0.0;
            for j in (i + 1)..n {
                l[(j, i)] = 0.0;
            }
            y[i] = 0.0;
        }
    }
    let mut chol = Vec::with_capacity(n * (n + 1) / 2);
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        for k in 0..=i {
            chol.push(l[(i, k)]);
        }
        diag.push(l[(i, i)]);
    }
    Ordered { b, chol, diag }
}

/// Fractional parts of square roots of the first `n` primes.
pub(crate) fn richtmyer(n: usize) -> Vec<f64> {
    let mut primes = Vec::with_capacity(n);
    let mut cand = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= cand).all(|&p| cand % p != 0) {
            primes.push(cand);
        }
        cand += 1;
    }
    primes.iter().map(|&p| (p as f64).sqrt().fract()).collect()
}

fn integrand(ord: &Ordered, w: &[f64], y: &mut [f64]) -> f64 {
    let n = ord.b.len();
    let mut f = 1.0;
    for i in 0..n {
        let row = ord.row(i);
        let mut mean = 0.0;
        for k in 0..i {
            mean += row[k] * y[k];
        }
        let d = ord.diag[i];
        if d > 0.0 {
            let e = normal::cdf((ord.b[i] - mean) / d);
            f *= e;
            if f == 0.0 {
                return 0.0;
            }
            if i + 1 < n {
                let u = (w[i] * e).clamp(1e-300, 1.0 - 1e-16);
                y[i] = normal::quantile(u);
            }
        } else {
            if ord.b[i] - mean < 0.0 {
                return 0.0;
            }
            y[i] = 0.0;
        }
    }
    f
}

fn sov_qmc(b: &[f64], corr: &DMatrix<f64>, cfg: &CdfConfig, rel_tol: f64, seed: u64) -> CdfEstimate {
    let ord = reorder(b, corr);
    let n = b.len();
    let dim = n - 1;
    let q = richtmyer(dim);
    let shifts: Vec<Vec<f64>> = (0..cfg.shifts)
        .map(|s| {
            let mut r = rng::substream(seed, s as u64);
            (0..dim).map(|_| r.random::<f64>()).collect()
        })
        .collect();
    let mut sums = vec![0.0; cfg.shifts];
    let mut done = 0usize;
    let mut target = cfg.initial_points.max(1);
    let mut w = vec![0.0; dim];
    let mut wa = vec![0.0; dim];
    let mut y = vec![0.0; n];
    loop {
        for (s, shift) in shifts.iter().enumerate() {
            let mut acc = 0.0;
            for i in (done + 1)..=target {
                let fi = i as f64;
                for k in 0..dim {
                    let x = (fi * q[k] + shift[k]).fract();
                    let t = (2.0 * x - 1.0).abs();
                    w[k] = t;
                    wa[k] = 1.0 - t;
                }
                acc += 0.5 * (integrand(&ord, &w, &mut y) + integrand(&ord, &wa, &mut y));
            }
            sums[s] += acc;
        }
        done = target;
        let means: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
        let est = means.iter().sum::<f64>() / means.len() as f64;
        let se = if means.len() > 1 {
            let var = means.iter().map(|m| (m - est) * (m - est)).sum::<f64>()
                / (means.len() * (means.len() - 1)) as f64;
            var.sqrt()
        } else {
            0.0
        };
        if 3.0 * se <= rel_tol * est || est == 0.0 || done >= cfg.max_points {
            return CdfEstimate {
                value: est,
                std_error: se,
            };
        }
        target = (done * 2).min(cfg.max_points);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corr2(rho: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
    }

    /// Gauss–Legendre-free oracle: composite Simpson over x of pdf(x)·Φ((b - ρx)/√(1-ρ²)).
    fn bvn_quadrature(a: f64, b: f64, rho: f64) -> f64 {
        let lo = -10.0f64;
        let hi = a.min(10.0);
        if hi <= lo {
            return 0.0;
        }
        let n = 20_000;
        let hstep = (hi - lo) / n as f64;
        let s = (1.0 - rho * rho).sqrt();
        let f = |x: f64| normal::pdf(x) * normal::cdf((b - rho * x) / s);
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * hstep;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * hstep / 3.0
    }

    #[test]
    fn univariate_symmetry() {
        let p = OrthantProblem::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1));
        let e = mvn_cdf(&p, 1).unwrap();
        assert_eq!(e.value, 0.5);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn trivariate_independent() {
        let p = OrthantProblem::new(DVector::zeros(3), DMatrix::identity(3, 3));
        let e = mvn_cdf(&p, 5).unwrap();
        assert!((e.value - 0.125).abs() < 1e-6, "{e:?}");
    }

    #[test]
    fn arcsine_identity_reference() {
        let rho: f64 = 0.612_372;
        let expect = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        assert!((expect - 0.354_893).abs() < 1e-6);
        let p = OrthantProblem::new(DVector::zeros(2), corr2(rho));
        let e = mvn_cdf(&p, 0).unwrap();
        assert!((e.value - expect).abs() < 1e-14);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn bivariate_matches_quadrature() {
        for &(a, b, rho) in &[
            (0.3, -0.7, 0.2),
            (1.5, 0.4, -0.6),
            (-1.0, -2.0, 0.95),
            (0.5, 0.5, -0.97),
            (2.0, -1.0, 0.8),
        ] {
            let exact = bvn_cdf(a, b, rho);
            let oracle = bvn_quadrature(a, b, rho);
            assert!((exact - oracle).abs() < 1e-9, "{a} {b} {rho}: {exact} vs {oracle}");
        }
    }

    #[test]
    fn infinite_limits() {
        let cov = DMatrix::identity(3, 3);
        let g = DVector::from_vec(vec![f64::INFINITY, 0.0, f64::INFINITY]);
        let e = mvn_cdf(&OrthantProblem::new(g, cov.clone()), 0).unwrap();
        assert_eq!(e.value, 0.5);
        let g = DVector::from_vec(vec![f64::NEG_INFINITY, 0.0, 1.0]);
        assert_eq!(mvn_cdf(&OrthantProblem::new(g, cov), 0).unwrap().value, 0.0);
    }

    #[test]
    fn trivariate_against_nested_quadrature() {
        // X3 independent of (X1, X2): P = Φ2 · Φ1, still routed through QMC
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let g = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let e = mvn_cdf(&OrthantProblem::new(g, cov), 3).unwrap();
        let oracle = bvn_quadrature(0.2, -0.4, 0.5) * normal::cdf(0.9);
        assert!((e.value - oracle).abs() < 3.0 * e.std_error + 1e-7, "{e:?} vs {oracle}");
    }

    #[test]
    fn equicorrelated_closed_form() {
        // P(X_i ≤ 0 ∀i) for equicorrelation 1/2 in 4 dims = 1/5
        let n = 4;
        let cov = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.5 });
        let e = mvn_cdf(&OrthantProblem::new(DVector::zeros(n), cov), 11).unwrap();
        assert!((e.value - 0.2).abs() < 3.0 * e.std_error + 1e-6, "{e:?}");
    }

    #[test]
    fn errors() {
        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let p = OrthantProblem::new(DVector::zeros(3), bad);
        assert!(matches!(mvn_cdf(&p, 0), Err(Error::Matrix(_))));
        let cfg = CdfConfig {
            max_dim: 2,
            ..CdfConfig::default()
        };
        let p = OrthantProblem::new(DVector::zeros(3), DMatrix::identity(3, 3));
        assert!(matches!(mvn_cdf_with(&p, &cfg, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let n = 6;
        let cov = DMatrix::from_fn(n, n, |i, j| 0.3f64.powi((i as i32 - j as i32).abs()));
        let g = DVector::from_fn(n, |i, _| 0.1 * i as f64 - 0.2);
        let p = OrthantProblem::new(g, cov);
        assert_eq!(mvn_cdf(&p, 42).unwrap(), mvn_cdf(&p, 42).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn monotone_in_limits(g in prop::collection::vec(-1.5f64..1.5, 4), bump in 0.05f64..1.0, idx in 0usize..4) {
            let cov = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.35 });
            let lo = DVector::from_vec(g.clone());
            let mut hi = lo.clone();
            hi[idx] += bump;
            let a = mvn_cdf(&OrthantProblem::new(lo, cov.clone()), 9).unwrap();
            let b = mvn_cdf(&OrthantProblem::new(hi, cov), 9).unwrap();
            prop_assert!(b.value + 3.0 * (a.std_error + b.std_error) >= a.value);
        }
    }
}
