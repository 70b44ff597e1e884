//! Unified skew-normal distributions `SUN_{p,h}(ξ, Ω, Δ, γ, Γ)`.
//!
//! Density
//! `φ_p(θ-ξ; Ω) Φ_h(γ + ΔᵀΩ̄⁻¹ω⁻¹(θ-ξ); Γ - ΔᵀΩ̄⁻¹Δ) / Φ_h(γ; Γ)`
//! with `ω = diag(Ω)^{1/2}` and `Ω̄ = ω⁻¹Ωω⁻¹`. A draw is
//! `ξ + ω(U₀ + ΔΓ⁻¹U₁)` with `U₀ ~ N_p(0, Ω̄ - ΔΓ⁻¹Δᵀ)` independent of
//! `U₁ ~ N_h(0, Γ)` truncated below `-γ`.
//!
//! `h = 0` is allowed and denotes the Gaussian `N_p(ξ, Ω)`.

use crate::error::{Error, Result};
use crate::gauss::chol::{check_symmetric, chol_solve_mat, chol_spd, min_eigenvalue, symmetrize};
use crate::gauss::normal::LN_SQRT_2PI;
use crate::gauss::{mvn_cdf_with, CdfConfig, CdfEstimate, OrthantProblem, TmvnConfig, TmvnMethod, TruncatedMvn};
use crate::rng;
use crate::sample::{Moments, SampleMatrix};
use crate::serde_mat::{from_rows, to_rows};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Smallest eigenvalue accepted for the joint correlation matrix `Ω*`.
pub const OMEGA_STAR_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SunDoc", into = "SunDoc")]
pub struct SunParams {
    xi: DVector<f64>,
    big_omega: DMatrix<f64>,
    delta: DMatrix<f64>,
    gamma: DVector<f64>,
    big_gamma: DMatrix<f64>,
    omega: DVector<f64>,
}

impl SunParams {
    /// Validated parameters.
    pub fn new(
        xi: DVector<f64>,
        big_omega: DMatrix<f64>,
        delta: DMatrix<f64>,
        gamma: DVector<f64>,
        big_gamma: DMatrix<f64>,
    ) -> Result<Self> {
        let s = Self::from_parts(xi, big_omega, delta, gamma, big_gamma)?;
        s.validate()?;
        Ok(s)
    }

    /// `N_p(ξ, Ω)` as a SUN with no latent dimension.
    pub fn gaussian(xi: DVector<f64>, big_omega: DMatrix<f64>) -> Result<Self> {
        let p = xi.len();
        Self::new(xi, big_omega, DMatrix::zeros(p, 0), DVector::zeros(0), DMatrix::zeros(0, 0))
    }

    /// Shape checks and derived scales only; callers must [`validate`](Self::validate).
    pub(crate) fn from_parts(
        xi: DVector<f64>,
        big_omega: DMatrix<f64>,
        delta: DMatrix<f64>,
        gamma: DVector<f64>,
        big_gamma: DMatrix<f64>,
    ) -> Result<Self> {
        let p = xi.len();
        let h = gamma.len();
        if p == 0 {
            return Err(Error::Dimension("SUN needs p >= 1".into()));
        }
        if big_omega.shape() != (p, p) || delta.shape() != (p, h) || big_gamma.shape() != (h, h) {
            return Err(Error::Dimension(format!(
                "SUN shapes inconsistent: xi {p}, Omega {:?}, Delta {:?}, gamma {h}, Gamma {:?}",
                big_omega.shape(),
                delta.shape(),
                big_gamma.shape()
            )));
        }
        let mut omega = DVector::zeros(p);
        for i in 0..p {
            let d = big_omega[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Matrix(format!(
                    "Omega diagonal entry {i} must be strictly positive, got {d}"
                )));
            }
            omega[i] = d.sqrt();
        }
        Ok(Self {
            xi,
            big_omega,
            delta,
            gamma,
            big_gamma,
            omega,
        })
    }

    /// Checks `Ω` SPD, unit-diagonal `Γ`, and that `Ω* = [Γ Δᵀ; Δ Ω̄]` is a
    /// full-rank correlation matrix.
    pub fn validate(&self) -> Result<()> {
        let all_finite = self.xi.iter().chain(self.big_omega.iter()).chain(self.delta.iter())
            .chain(self.gamma.iter()).chain(self.big_gamma.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Numerical("non-finite SUN parameter".into()));
        }
        check_symmetric(&self.big_omega)?;
        chol_spd(&self.big_omega).map_err(|e| e.with_context("SUN Omega"))?;
        let h = self.h();
        for i in 0..h {
            if (self.big_gamma[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::Identifiability(format!(
                    "Gamma diagonal entry {i} is {} (must be 1)",
                    self.big_gamma[(i, i)]
                )));
            }
        }
        if h == 0 {
            return Ok(());
        }
        check_symmetric(&self.big_gamma)?;
        let star = self.omega_star();
        let lambda = min_eigenvalue(&star);
        if !(lambda > OMEGA_STAR_FLOOR) {
            return Err(Error::Identifiability(format!(
                "Omega* is not a full-rank correlation matrix (min eigenvalue {lambda:e})"
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.xi.len()
    }
    pub fn h(&self) -> usize {
        self.gamma.len()
    }
    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }
    pub fn big_omega(&self) -> &DMatrix<f64> {
        &self.big_omega
    }
    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }
    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }
    pub fn big_gamma(&self) -> &DMatrix<f64> {
        &self.big_gamma
    }
    /// Scale vector `ω`.
    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn omega_bar(&self) -> DMatrix<f64> {
        let w = &self.omega;
        DMatrix::from_fn(self.p(), self.p(), |i, j| self.big_omega[(i, j)] / (w[i] * w[j]))
    }

    /// `[Γ Δᵀ; Δ Ω̄]`.
    pub fn omega_star(&self) -> DMatrix<f64> {
        let (p, h) = (self.p(), self.h());
        let mut s = DMatrix::zeros(h + p, h + p);
        s.view_mut((0, 0), (h, h)).copy_from(&self.big_gamma);
        s.view_mut((h, 0), (p, h)).copy_from(&self.delta);
        s.view_mut((0, h), (h, p)).copy_from(&self.delta.transpose());
        s.view_mut((h, h), (p, p)).copy_from(&self.omega_bar());
        s
    }

    /// Largest entrywise difference across all five parameters; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &SunParams) -> Option<f64> {
        if self.p() != other.p() || self.h() != other.h() {
            return None;
        }
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Some(
            d(self.xi.as_slice(), other.xi.as_slice())
                .max(d(self.big_omega.as_slice(), other.big_omega.as_slice()))
                .max(d(self.delta.as_slice(), other.delta.as_slice()))
                .max(d(self.gamma.as_slice(), other.gamma.as_slice()))
                .max(d(self.big_gamma.as_slice(), other.big_gamma.as_slice())),
        )
    }

    /// Normalising constant `Φ_h(γ; Γ)`.
    pub fn normalizer(&self, cfg: &CdfConfig, seed: u64) -> Result<CdfEstimate> {
        if self.h() == 0 {
            return Ok(CdfEstimate::exact(1.0));
        }
        mvn_cdf_with(&cfg.problem(self.gamma.clone(), self.big_gamma.clone()), cfg, seed)
    }

    pub fn density(&self, theta: &DVector<f64>, cfg: &CdfConfig, seed: u64) -> Result<f64> {
        self.density_evaluator(cfg, seed)?.eval(theta)
    }

    /// Precomputes everything that does not depend on the evaluation point.
    /// All evaluations share `seed`, so a curve over a grid is smooth.
    pub fn density_evaluator(&self, cfg: &CdfConfig, seed: u64) -> Result<DensityEvaluator> {
        let p = self.p();
        let chol_omega = chol_spd(&self.big_omega).map_err(|e| e.with_context("SUN Omega"))?;
        let ln_det_half: f64 = chol_omega.diagonal().iter().map(|d| d.ln()).sum();
        let ln_norm = -(p as f64) * LN_SQRT_2PI - ln_det_half;
        let (proj, cond) = if self.h() > 0 {
            let lbar = chol_spd(&self.omega_bar()).map_err(|e| e.with_context("SUN Omega-bar"))?;
            let a = chol_solve_mat(&lbar, &self.delta); // Ω̄⁻¹Δ
            let mut proj = a.transpose();
            for j in 0..p {
                let s = 1.0 / self.omega[j];
                proj.column_mut(j).scale_mut(s);
            }
            let cond = symmetrize(&(&self.big_gamma - self.delta.transpose() * &a));
            let lambda = min_eigenvalue(&cond);
            if lambda < -cfg.psd_floor {
                return Err(Error::Identifiability(format!(
                    "Gamma - Delta' Omega-bar^-1 Delta is not PSD (min eigenvalue {lambda:e})"
                )));
            }
            (proj, cond)
        } else {
            (DMatrix::zeros(0, p), DMatrix::zeros(0, 0))
        };
        let denom = self.normalizer(cfg, seed)?.value;
        if !(denom > 0.0) {
            return Err(Error::Numerical("SUN normalising constant is zero".into()));
        }
        Ok(DensityEvaluator {
            xi: self.xi.clone(),
            chol_omega,
            ln_norm,
            proj,
            gamma: self.gamma.clone(),
            cond,
            denom,
            cfg: cfg.clone(),
            seed,
        })
    }

    /// `R` independent draws; replicate `r` uses its own substream.
    pub fn sample(&self, r: usize, seed: u64, tcfg: &TmvnConfig) -> Result<SampleMatrix> {
        if r == 0 {
            return Err(Error::Validation("sample count must be at least 1".into()));
        }
        let p = self.p();
        let h = self.h();
        let seed0 = rng::derive(seed, &[0]);
        if h == 0 {
            let l = chol_spd(&self.big_omega).map_err(|e| e.with_context("SUN Omega"))?;
            let rows: Vec<DVector<f64>> = (0..r)
                .into_par_iter()
                .map(|i| {
                    let mut g = rng::substream(seed0, i as u64);
                    &self.xi + &l * std_normal(p, &mut g)
                })
                .collect();
            return Ok(SampleMatrix::from_rows(&rows, "SUN (Gaussian)", seed, true));
        }
        let lg = chol_spd(&self.big_gamma).map_err(|e| e.with_context("SUN Gamma"))?;
        let k = chol_solve_mat(&lg, &self.delta.transpose()).transpose(); // ΔΓ⁻¹
        let cov0 = symmetrize(&(self.omega_bar() - &k * self.delta.transpose()));
        let l0 = chol_spd(&cov0).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::Identifiability(format!(
                "Omega-bar - Delta Gamma^-1 Delta' is not positive definite ({e})"
            )),
            other => other,
        })?;
        let tmvn = TruncatedMvn::lower_orthant(&self.big_gamma, &(-&self.gamma), tcfg)?;
        let u1 = tmvn.sample_n(r, rng::derive(seed, &[1]))?;
        let rows: Vec<DVector<f64>> = u1
            .into_par_iter()
            .enumerate()
            .map(|(i, u1)| {
                let mut g = rng::substream(seed0, i as u64);
                let u = &l0 * std_normal(p, &mut g) + &k * u1;
                &self.xi + self.omega.component_mul(&u)
            })
            .collect();
        let iid = tmvn.method() == TmvnMethod::Exact;
        Ok(SampleMatrix::from_rows(
            &rows,
            format!("SUN_{{{p},{h}}}"),
            seed,
            iid,
        ))
    }

    /// Monte Carlo mean and covariance of [`sample`](Self::sample) draws.
    pub fn mc_moments(&self, r: usize, seed: u64, tcfg: &TmvnConfig) -> Result<Moments> {
        if r < 2 {
            return Err(Error::Validation("moments need at least 2 draws".into()));
        }
        Ok(self.sample(r, seed, tcfg)?.moments())
    }

    /// Parameters of the sub-vector `θ_I` (0-based indices).
    pub fn marginal(&self, indices: &[usize]) -> Result<SunParams> {
        if indices.is_empty() {
            return Err(Error::Validation("marginal needs at least one index".into()));
        }
        let p = self.p();
        let mut seen = vec![false; p];
        for &i in indices {
            if i >= p {
                return Err(Error::Dimension(format!("index {i} out of range for p = {p}")));
            }
            if seen[i] {
                return Err(Error::Validation(format!("index {i} repeated")));
            }
            seen[i] = true;
        }
        Ok(Self {
            xi: self.xi.select_rows(indices),
            big_omega: self.big_omega.select_rows(indices).select_columns(indices),
            delta: self.delta.select_rows(indices),
            gamma: self.gamma.clone(),
            big_gamma: self.big_gamma.clone(),
            omega: self.omega.select_rows(indices),
        })
    }
}

fn std_normal<R: Rng>(n: usize, g: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| g.sample::<f64, _>(StandardNormal))
}

/// Reusable density evaluator for one SUN.
#[derive(Clone, Debug)]
pub struct DensityEvaluator {
    xi: DVector<f64>,
    chol_omega: DMatrix<f64>,
    ln_norm: f64,
    proj: DMatrix<f64>,
    gamma: DVector<f64>,
    cond: DMatrix<f64>,
    denom: f64,
    cfg: CdfConfig,
    seed: u64,
}

impl DensityEvaluator {
    pub fn eval(&self, theta: &DVector<f64>) -> Result<f64> {
        let r = theta - &self.xi;
        let z = self
            .chol_omega
            .solve_lower_triangular(&r)
            .ok_or_else(|| Error::Numerical("singular Omega factor".into()))?;
        let gauss = (self.ln_norm - 0.5 * z.norm_squared()).exp();
        if self.gamma.is_empty() {
            return Ok(gauss);
        }
        let lim = &self.gamma + &self.proj * r;
        let num = mvn_cdf_with(&OrthantProblem { gamma: lim, cov: self.cond.clone(), rel_tol: self.cfg.rel_tol }, &self.cfg, self.seed)
            .map_err(|e| match e {
                Error::Matrix(m) => Error::Identifiability(m),
                other => other,
            })?;
        Ok(gauss * num.value / self.denom)
    }
}

#[derive(Serialize, Deserialize)]
struct SunDoc {
    xi: Vec<f64>,
    #[serde(rename = "Omega")]
    big_omega: Vec<Vec<f64>>,
    #[serde(rename = "Delta")]
    delta: Vec<Vec<f64>>,
    gamma: Vec<f64>,
    #[serde(rename = "Gamma")]
    big_gamma: Vec<Vec<f64>>,
}

impl TryFrom<SunDoc> for SunParams {
    type Error = Error;
    fn try_from(d: SunDoc) -> Result<Self> {
        let h = d.gamma.len();
        SunParams::new(
            DVector::from_vec(d.xi),
            from_rows(&d.big_omega, None, "Omega")?,
            from_rows(&d.delta, Some(h), "Delta")?,
            DVector::from_vec(d.gamma),
            from_rows(&d.big_gamma, Some(h), "Gamma")?,
        )
    }
}

impl From<SunParams> for SunDoc {
    fn from(s: SunParams) -> Self {
        SunDoc {
            xi: s.xi.iter().copied().collect(),
            big_omega: to_rows(&s.big_omega),
            delta: to_rows(&s.delta),
            gamma: s.gamma.iter().copied().collect(),
            big_gamma: to_rows(&s.big_gamma),
        }
    }
}
