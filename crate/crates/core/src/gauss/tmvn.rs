//! Truncated multivariate normal sampling `X ~ N(0, Σ)` restricted to `l ≤ X ≤ u`.
//!
//! The exact sampler is minimax exponential tilting: after a reordered
//! Cholesky factorisation the tilting parameter is the saddle point of a
//! convex-concave bound on the log acceptance probability, found by Newton's
//! method; a sequential truncated-normal proposal is then accepted or rejected
//! against that bound, producing independent exact draws. Above the exact
//! dimension cap an optional Gibbs sampler can be used instead; its draws are
//! correlated.

use super::chol::check_symmetric;
use super::normal::{self, ln_prob_between};
use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmvnConfig {
    /// Largest dimension handled by the exact sampler.
    pub exact_max_dim: usize,
    /// Fall back to Gibbs sampling above `exact_max_dim` instead of failing.
    pub allow_gibbs: bool,
    pub gibbs_burn_in: usize,
    pub gibbs_thin: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Proposals tried per draw before giving up.
    pub max_attempts: u64,
}

impl Default for TmvnConfig {
    fn default() -> Self {
        Self {
            exact_max_dim: 150,
            allow_gibbs: false,
            gibbs_burn_in: 500,
            gibbs_thin: 5,
            newton_tol: 1e-8,
            newton_max_iter: 100,
            max_attempts: 1_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TmvnMethod {
    Exact,
    Gibbs,
}

/// A prepared truncated normal; construction does all the per-distribution work.
#[derive(Clone, Debug)]
pub struct TruncatedMvn {
    dim: usize,
    lower: DVector<f64>,
    upper: DVector<f64>,
    kind: Kind,
}

#[derive(Clone, Debug)]
enum Kind {
    Tilted(Tilted),
    Gibbs(GibbsState),
}

#[derive(Clone, Debug)]
struct Tilted {
    lfull: DMatrix<f64>,
    /// strictly lower part of the row-scaled factor
    lmat: DMatrix<f64>,
    perm: Vec<usize>,
    l: Vec<f64>,
    u: Vec<f64>,
    mu: Vec<f64>,
    psi_star: f64,
    max_attempts: u64,
}

#[derive(Clone, Debug)]
struct GibbsState {
    precision: DMatrix<f64>,
    burn_in: usize,
    thin: usize,
}

impl TruncatedMvn {
    pub fn new(
        cov: &DMatrix<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
        cfg: &TmvnConfig,
    ) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension(format!(
                "truncated normal: limits {} / {} and covariance {}x{}",
                lower.len(),
                upper.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_symmetric(cov)?;
        for i in 0..d {
            if lower[i].is_nan() || upper[i].is_nan() || !(lower[i] < upper[i]) {
                return Err(Error::Validation(format!(
                    "truncation bounds at {i} must satisfy lower < upper, got [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        let kind = if d <= cfg.exact_max_dim {
            Kind::Tilted(Tilted::new(cov, lower, upper, cfg)?)
        } else if cfg.allow_gibbs {
            log::warn!("truncated normal of dimension {d} uses Gibbs sampling; draws are not independent");
            let precision = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::not_pd(0, f64::NAN).with_context("truncated normal covariance"))?
                .inverse();
            Kind::Gibbs(GibbsState {
                precision,
                burn_in: cfg.gibbs_burn_in,
                thin: cfg.gibbs_thin.max(1),
            })
        } else {
            return Err(Error::Dimension(format!(
                "truncated normal dimension {d} exceeds exact cap {} (enable the Gibbs fallback to proceed)",
                cfg.exact_max_dim
            )));
        };
        Ok(Self {
            dim: d,
            lower: lower.clone(),
            upper: upper.clone(),
            kind,
        })
    }

    /// Lower-truncated at `lower`, unbounded above.
    pub fn lower_orthant(cov: &DMatrix<f64>, lower: &DVector<f64>, cfg: &TmvnConfig) -> Result<Self> {
        let upper = DVector::from_element(lower.len(), f64::INFINITY);
        Self::new(cov, lower, &upper, cfg)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn method(&self) -> TmvnMethod {
        match self.kind {
            Kind::Tilted(_) => TmvnMethod::Exact,
            Kind::Gibbs(_) => TmvnMethod::Gibbs,
        }
    }

    /// Upper bound on the log probability of the truncation region (exact method only).
    pub fn log_prob_bound(&self) -> Option<f64> {
        match &self.kind {
            Kind::Tilted(t) => Some(t.psi_star),
            Kind::Gibbs(_) => None,
        }
    }

    /// `n` draws; draw `i` of the exact sampler depends only on `(seed, i)`.
    pub fn sample_n(&self, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        match &self.kind {
            Kind::Tilted(t) => (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::substream(seed, i as u64);
                    self.exact_draw(t, &mut r)
                })
                .collect(),
            Kind::Gibbs(g) => Ok(self.gibbs_chain(g, n, seed)),
        }
    }

    /// One exact draw (exact method) from the caller's generator.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        match &self.kind {
            Kind::Tilted(t) => self.exact_draw(t, rng),
            Kind::Gibbs(g) => Ok(self.gibbs_chain(g, 1, rng.random()).remove(0)),
        }
    }

    fn exact_draw<R: Rng + ?Sized>(&self, t: &Tilted, rng: &mut R) -> Result<DVector<f64>> {
        let d = self.dim;
        let mut z = vec![0.0; d];
        for _ in 0..t.max_attempts {
            let logp = t.propose(rng, &mut z);
            let e: f64 = -(1.0 - rng.random::<f64>()).ln();
            if e <= t.psi_star - logp {
                continue;
            }
            let mut out = DVector::zeros(d);
            for i in 0..d {
                let mut acc = 0.0;
                for k in 0..=i {
                    acc += t.lfull[(i, k)] * z[k];
                }
                out[t.perm[i]] = acc;
            }
            // round-off can push a coordinate just outside the region
            if (0..d).any(|i| out[i] < self.lower[i] || out[i] > self.upper[i]) {
                continue;
            }
            return Ok(out);
        }
        Err(Error::Numerical(format!(
            "truncated normal sampler exceeded {} proposals",
            t.max_attempts
        )))
    }

    fn gibbs_chain(&self, g: &GibbsState, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let d = self.dim;
        let mut r = rng::substream(seed, 0);
        let mut x = DVector::from_fn(d, |i, _| {
            let (l, u) = (self.lower[i], self.upper[i]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l.max(0.0) + 1.0,
                (false, true) => u.min(0.0) - 1.0,
                (false, false) => 0.0,
            }
        });
        let mut out = Vec::with_capacity(n);
        let mut sweep = 0usize;
        while out.len() < n {
            for i in 0..d {
                let qii = g.precision[(i, i)];
                let mut s = 0.0;
                for j in 0..d {
                    if j != i {
                        s += g.precision[(i, j)] * x[j];
                    }
                }
                let m = -s / qii;
                let sd = 1.0 / qii.sqrt();
                let z = trandn((self.lower[i] - m) / sd, (self.upper[i] - m) / sd, &mut r);
                x[i] = (m + sd * z).clamp(self.lower[i], self.upper[i]);
            }
            sweep += 1;
            if sweep > g.burn_in && (sweep - g.burn_in) % g.thin == 0 {
                out.push(x.clone());
            }
        }
        out
    }
}

impl Tilted {
    fn new(cov: &DMatrix<f64>, lower: &DVector<f64>, upper: &DVector<f64>, cfg: &TmvnConfig) -> Result<Self> {
        let d = lower.len();
        let (lfull, perm, mut l, mut u) = cholperm(cov, lower.as_slice(), upper.as_slice())?;
        let mut lmat = DMatrix::zeros(d, d);
        for i in 0..d {
            let di = lfull[(i, i)];
            l[i] /= di;
            u[i] /= di;
            for k in 0..i {
                lmat[(i, k)] = lfull[(i, k)] / di;
            }
        }
        let mu_x = if d > 1 {
            newton(&lmat, &l, &u, cfg)?
        } else {
            Vec::new()
        };
        let (x, mu) = split(&mu_x, d);
        let psi_star = psy(&lmat, &l, &u, &x, &mu);
        if !psi_star.is_finite() || psi_star < (1e-300f64).ln() {
            return Err(Error::Infeasible { log_prob: psi_star });
        }
        Ok(Self {
            lfull,
            lmat,
            perm,
            l,
            u,
            mu,
            psi_star,
            max_attempts: cfg.max_attempts,
        })
    }

    fn propose<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64]) -> f64 {
        let d = self.l.len();
        let mut logp = 0.0;
        for k in 0..d {
            let mut col = 0.0;
            for j in 0..k {
                col += self.lmat[(k, j)] * z[j];
            }
            let mk = self.mu[k];
            let tl = self.l[k] - mk - col;
            let tu = self.u[k] - mk - col;
            z[k] = mk + trandn(tl, tu, rng);
            logp += ln_prob_between(tl, tu) + 0.5 * mk * mk - mk * z[k];
        }
        logp
    }
}

/// Splits the Newton unknown into `(x, mu)`, each padded with a trailing zero.
fn split(y: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; d];
    let mut mu = vec![0.0; d];
    if d > 1 {
        x[..d - 1].copy_from_slice(&y[..d - 1]);
        mu[..d - 1].copy_from_slice(&y[d - 1..]);
    }
    (x, mu)
}

/// Cholesky factor with the variable ordering that integrates the least
/// probable (conditionally on the truncated means so far) coordinate first.
#[allow(clippy::type_complexity)]
fn cholperm(
    cov: &DMatrix<f64>,
    lower: &[f64],
    upper: &[f64],
) -> Result<(DMatrix<f64>, Vec<usize>, Vec<f64>, Vec<f64>)> {
    let d = lower.len();
    let mut sig = cov.clone();
    let mut l = lower.to_vec();
    let mut u = upper.to_vec();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut lf = DMatrix::<f64>::zeros(d, d);
    let mut z = vec![0.0; d];
    let scale = (0..d).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max);
    for j in 0..d {
        let mut best = j;
        let mut best_p = f64::INFINITY;
        for i in j..d {
            let mut s = sig[(i, i)];
            let mut m = 0.0;
            for k in 0..j {
                s -= lf[(i, k)] * lf[(i, k)];
                m += lf[(i, k)] * z[k];
            }
            let s = s.max(f64::EPSILON).sqrt();
            let p = ln_prob_between((l[i] - m) / s, (u[i] - m) / s);
            if p < best_p {
                best_p = p;
                best = i;
            }
        }
        if best != j {
            sig.swap_rows(j, best);
            sig.swap_columns(j, best);
            lf.swap_rows(j, best);
            l.swap(j, best);
            u.swap(j, best);
            perm.swap(j, best);
        }
        let mut s = sig[(j, j)];
        for k in 0..j {
            s -= lf[(j, k)] * lf[(j, k)];
        }
        if !(s > 1e-14 * scale) {
            return Err(Error::not_pd(perm[j], s).with_context("truncated normal covariance"));
        }
        let djj = s.sqrt();
        lf[(j, j)] = djj;
        for i in (j + 1)..d {
            let mut acc = sig[(i, j)];
            for k in 0..j {
                acc -= lf[(i, k)] * lf[(j, k)];
            }
            lf[(i, j)] = acc / djj;
        }
        let mut m = 0.0;
        for k in 0..j {
            m += lf[(j, k)] * z[k];
        }
        let tl = (l[j] - m) / djj;
        let tu = (u[j] - m) / djj;
        let w = ln_prob_between(tl, tu);
        z[j] = tail_density(tl, w) - tail_density(tu, w);
    }
    Ok((lf, perm, l, u))
}

/// `pdf(t) / exp(w)`, zero at infinite `t`.
fn tail_density(t: f64, w: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        (-0.5 * t * t - w - normal::LN_SQRT_2PI).exp()
    }
}

/// Gradient of the tilting objective and its Jacobian.
fn gradpsi(y: &[f64], lmat: &DMatrix<f64>, l: &[f64], u: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let d = l.len();
    let (x, mu) = split(y, d);
    let mut pvec = vec![0.0; d];
    let mut dp = vec![0.0; d];
    for i in 0..d {
        let mut c = 0.0;
        for k in 0..i {
            c += lmat[(i, k)] * x[k];
        }
        let lt = l[i] - mu[i] - c;
        let ut = u[i] - mu[i] - c;
        let w = ln_prob_between(lt, ut);
        let pl = tail_density(lt, w);
        let pu = tail_density(ut, w);
        pvec[i] = pl - pu;
        let ltf = if lt.is_finite() { lt } else { 0.0 };
        let utf = if ut.is_finite() { ut } else { 0.0 };
        dp[i] = -pvec[i] * pvec[i] + ltf * pl - utf * pu;
    }
    let n = d - 1;
    let mut grad = DVector::zeros(2 * n);
    for j in 0..n {
        let mut s = 0.0;
        for i in (j + 1)..d {
            s += pvec[i] * lmat[(i, j)];
        }
        grad[j] = -mu[j] + s;
        grad[n + j] = mu[j] - x[j] + pvec[j];
    }
    // DL = diag(dp) L, mx = -I + DL, xx = L' DL
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for a in 0..n {
        for b in 0..n {
            let mut xx = 0.0;
            for i in (a.max(b) + 1)..d {
                xx += lmat[(i, a)] * dp[i] * lmat[(i, b)];
            }
            jac[(a, b)] = xx;
            let mx_ab = dp[a] * lmat[(a, b)] - if a == b { 1.0 } else { 0.0 };
            jac[(n + a, b)] = mx_ab;
            jac[(b, n + a)] = mx_ab;
        }
        jac[(n + a, n + a)] = 1.0 + dp[a];
    }
    (grad, jac)
}

fn psy(lmat: &DMatrix<f64>, l: &[f64], u: &[f64], x: &[f64], mu: &[f64]) -> f64 {
    let d = l.len();
    let mut p = 0.0;
    for i in 0..d {
        let mut c = 0.0;
        for k in 0..i {
            c += lmat[(i, k)] * x[k];
        }
        p += ln_prob_between(l[i] - mu[i] - c, u[i] - mu[i] - c) + 0.5 * mu[i] * mu[i] - x[i] * mu[i];
    }
    p
}

fn newton(lmat: &DMatrix<f64>, l: &[f64], u: &[f64], cfg: &TmvnConfig) -> Result<Vec<f64>> {
    let d = l.len();
    let mut y = vec![0.0; 2 * (d - 1)];
    let (mut f, mut jac) = gradpsi(&y, lmat, l, u);
    let mut norm = f.norm();
    for _ in 0..cfg.newton_max_iter {
        if norm < cfg.newton_tol {
            return Ok(y);
        }
        let step = jac
            .clone()
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::Numerical("singular Jacobian in tilting solve".into()))?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let (fc, jc) = gradpsi(&cand, lmat, l, u);
            let nc = fc.norm();
            if (nc.is_finite() && nc < (1.0 - 1e-4 * t) * norm) || t < 1e-6 {
                if !nc.is_finite() {
                    return Err(Error::Numerical("tilting solve produced non-finite values".into()));
                }
                y = cand;
                f = fc;
                jac = jc;
                norm = nc;
                break;
            }
            t *= 0.5;
        }
    }
    if norm < cfg.newton_tol {
        Ok(y)
    } else {
        Err(Error::Numerical(format!(
            "tilting solve did not converge in {} iterations (residual {norm:e})",
            cfg.newton_max_iter
        )))
    }
}

/// Standard normal truncated to `[l, u]`.
pub fn trandn<R: Rng + ?Sized>(l: f64, u: f64, rng: &mut R) -> f64 {
    const A: f64 = 0.66;
    if l > A {
        ntail(l, u, rng)
    } else if u < -A {
        -ntail(-u, -l, rng)
    } else if (u - l).abs() > 2.0 {
        loop {
            let x: f64 = rng.sample(StandardNormal);
            if x >= l && x <= u {
                return x;
            }
        }
    } else {
        let pl = normal::sf(l);
        let pu = normal::sf(u);
        let q = pl - (pl - pu) * rng.random::<f64>();
        -normal::quantile(q)
    }
}

/// Rayleigh proposal for the tail `[l, u]`, `l > 0`.
fn ntail<R: Rng + ?Sized>(l: f64, u: f64, rng: &mut R) -> f64 {
    let c = 0.5 * l * l;
    let f = (c - 0.5 * u * u).exp_m1();
    loop {
        let x = c - (1.0 + rng.random::<f64>() * f).ln();
        let v: f64 = rng.random();
        if v * v * x <= c {
            return (2.0 * x).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::mvn_cdf::bvn_cdf;
    use proptest::prelude::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn trandn_respects_bounds_and_moments() {
        let mut r = rng::substream(3, 0);
        for &(l, u) in &[(-0.5, 0.4), (1.0, f64::INFINITY), (f64::NEG_INFINITY, -3.0), (-4.0, 4.0), (8.0, 9.0)] {
            let xs: Vec<f64> = (0..40_000).map(|_| trandn(l, u, &mut r)).collect();
            assert!(xs.iter().all(|&x| x >= l && x <= u));
            let z = (normal::cdf(u) - normal::cdf(l)).max(1e-300);
            let oracle = if l > 5.0 {
                // first moment via ratio of tail densities
                (normal::pdf(l) - normal::pdf(u)) / (normal::sf(l) - normal::sf(u))
            } else {
                (normal::pdf(l) - normal::pdf(u)) / z
            };
            assert!((mean(&xs) - oracle).abs() < 0.02, "({l},{u}) {} vs {oracle}", mean(&xs));
        }
    }

    #[test]
    fn univariate_orthant_matches_truncated_moment() {
        let cov = DMatrix::from_element(1, 1, 4.0);
        let lo = DVector::from_element(1, 1.0);
        let t = TruncatedMvn::lower_orthant(&cov, &lo, &TmvnConfig::default()).unwrap();
        let xs = t.sample_n(20_000, 1).unwrap();
        let m = mean(&xs.iter().map(|x| x[0]).collect::<Vec<_>>());
        let oracle = 2.0 * normal::inv_mills(-0.5);
        assert!((m - oracle).abs() < 0.03, "{m} vs {oracle}");
    }

    #[test]
    fn bivariate_probability_of_subregion() {
        // X ~ N(0, [[1, .6], [.6, 1]]) | X > (-0.3, 0.2); check P(X1 < 0.5 | region)
        let rho = 0.6;
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let lo = DVector::from_vec(vec![-0.3, 0.2]);
        let t = TruncatedMvn::lower_orthant(&cov, &lo, &TmvnConfig::default()).unwrap();
        let xs = t.sample_n(40_000, 2).unwrap();
        let frac = xs.iter().filter(|x| x[0] < 0.5).count() as f64 / xs.len() as f64;
        // P(X > lo) = Φ2(-lo; ρ) by symmetry
        let region = bvn_cdf(0.3, -0.2, rho);
        let upper_cut = bvn_cdf(0.3, -0.2, rho) - bvn_cdf(-0.5, -0.2, rho);
        let oracle = upper_cut / region;
        assert!((frac - oracle).abs() < 0.01, "{frac} vs {oracle}");
        // the tilting bound dominates the true probability
        assert!(t.log_prob_bound().unwrap() >= region.ln() - 1e-9);
    }

    #[test]
    fn draws_are_thread_count_invariant() {
        let n = 8;
        let cov = DMatrix::from_fn(n, n, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let lo = DVector::from_fn(n, |i, _| 0.2 * i as f64 - 0.5);
        let t = TruncatedMvn::lower_orthant(&cov, &lo, &TmvnConfig::default()).unwrap();
        let a = t.sample_n(50, 77).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| t.sample_n(50, 77).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_region_detected() {
        let cov = DMatrix::identity(3, 3);
        let lo = DVector::from_element(3, 30.0);
        let err = TruncatedMvn::lower_orthant(&cov, &lo, &TmvnConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn dimension_cap_and_gibbs_fallback() {
        let cfg = TmvnConfig {
            exact_max_dim: 3,
            ..TmvnConfig::default()
        };
        let cov = DMatrix::identity(5, 5);
        let lo = DVector::zeros(5);
        assert!(matches!(
            TruncatedMvn::lower_orthant(&cov, &lo, &cfg),
            Err(Error::Dimension(_))
        ));
        let cfg = TmvnConfig {
            allow_gibbs: true,
            ..cfg
        };
        let t = TruncatedMvn::lower_orthant(&cov, &lo, &cfg).unwrap();
        assert_eq!(t.method(), TmvnMethod::Gibbs);
        let xs = t.sample_n(4000, 5).unwrap();
        let m = mean(&xs.iter().map(|x| x[2]).collect::<Vec<_>>());
        let oracle = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - oracle).abs() < 0.05, "{m}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn draws_satisfy_constraints(
            lo in prop::collection::vec(-2.0f64..1.5, 5),
            rho in -0.15f64..0.6,
            seed in 0u64..1000,
        ) {
            let cov = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { rho });
            let lo = DVector::from_vec(lo);
            let t = TruncatedMvn::lower_orthant(&cov, &lo, &TmvnConfig::default()).unwrap();
            for x in t.sample_n(30, seed).unwrap() {
                for i in 0..5 {
                    prop_assert!(x[i] >= lo[i]);
                }
            }
        }
    }
}
