//! Batch results: the joint smoothing distribution of `θ_{1:n}` is a single
//! SUN built from the stacked Gaussian prior of the whole path; its
//! normalising constant is the marginal likelihood.

use crate::error::{Error, Result};
use crate::gauss::{mvn_cdf_with, CdfConfig, CdfEstimate};
use crate::model::{signs, BinarySeries, ModelSpec};
use crate::sun::SunParams;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest stacked state dimension `p·n` materialised densely.
pub const MAX_STACKED_DIM: usize = 1000;

/// Stacked prior and observation structure of the path `θ_{1:n}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedSystem {
    pub xi: DVector<f64>,
    pub omega: DMatrix<f64>,
    /// block diagonal with blocks `B_t F_t`
    pub d: DMatrix<f64>,
    /// block diagonal with blocks `B_t V_t B_t`
    pub vbig: DMatrix<f64>,
    pub s: DVector<f64>,
}

pub fn build_stacked(spec: &ModelSpec, y: &BinarySeries) -> Result<StackedSystem> {
    spec.check()?;
    y.check_against(spec)?;
    let (m, p, n) = (spec.m, spec.p, spec.n);
    if p * n > MAX_STACKED_DIM {
        return Err(Error::Dimension(format!(
            "stacked state dimension {} exceeds {MAX_STACKED_DIM}",
            p * n
        )));
    }
    let mut xi = DVector::zeros(p * n);
    let mut omega = DMatrix::zeros(p * n, p * n);
    let mut mean = spec.a0.clone();
    let mut cov = spec.p0.clone();
    for t in 1..=n {
        let g = spec.g(t);
        mean = g * mean;
        cov = g * &cov * g.transpose() + spec.w(t);
        cov = (&cov + cov.transpose()) * 0.5;
        let i = (t - 1) * p;
        xi.rows_mut(i, p).copy_from(&mean);
        omega.view_mut((i, i), (p, p)).copy_from(&cov);
        // Ω[t,q] = G_t Ω[t-1,q] for q < t
        for q in 1..t {
            let j = (q - 1) * p;
            let blk = g * omega.view((i - p, j), (p, p));
            omega.view_mut((i, j), (p, p)).copy_from(&blk);
            omega.view_mut((j, i), (p, p)).copy_from(&blk.transpose());
        }
    }
    let mut d = DMatrix::zeros(m * n, p * n);
    let mut vbig = DMatrix::zeros(m * n, m * n);
    for t in 1..=n {
        let b = signs(y.row(t))?;
        let bf = DMatrix::from_fn(m, p, |l, k| b[l] * spec.f(t)[(l, k)]);
        let bvb = DMatrix::from_fn(m, m, |a, c| b[a] * spec.v(t)[(a, c)] * b[c]);
        d.view_mut(((t - 1) * m, (t - 1) * p), (m, p)).copy_from(&bf);
        vbig.view_mut(((t - 1) * m, (t - 1) * m), (m, m)).copy_from(&bvb);
    }
    let total = &d * &omega * d.transpose() + &vbig;
    let s = DVector::from_fn(m * n, |i, _| total[(i, i)].sqrt());
    Ok(StackedSystem {
        xi,
        omega,
        d,
        vbig,
        s,
    })
}

/// `p(θ_{1:n} | y_{1:n})`.
pub fn joint_smoothing(spec: &ModelSpec, y: &BinarySeries) -> Result<SunParams> {
    let st = build_stacked(spec, y)?;
    let total = &st.d * &st.omega * st.d.transpose() + &st.vbig;
    let mn = st.s.len();
    let pn = st.xi.len();
    let w = DVector::from_fn(pn, |i, _| st.omega[(i, i)].sqrt());
    let od = &st.omega * st.d.transpose();
    let delta = DMatrix::from_fn(pn, mn, |i, j| od[(i, j)] / (w[i] * st.s[j]));
    let dxi = &st.d * &st.xi;
    let gamma = DVector::from_fn(mn, |i, _| dxi[i] / st.s[i]);
    let big_gamma = DMatrix::from_fn(mn, mn, |i, j| {
        if i == j {
            1.0
        } else {
            0.5 * (total[(i, j)] + total[(j, i)]) / (st.s[i] * st.s[j])
        }
    });
    let out = SunParams::from_parts(st.xi, st.omega, delta, gamma, big_gamma)?;
    out.validate().map_err(|e| e.with_context("joint smoothing"))?;
    Ok(out)
}

/// Rows of the stacked state belonging to time `t`.
pub fn block_indices(p: usize, t: usize) -> Vec<usize> {
    ((t - 1) * p..t * p).collect()
}

/// `p(θ_t | y_{1:n})`.
pub fn marginal_smoothing(spec: &ModelSpec, y: &BinarySeries, t: usize) -> Result<SunParams> {
    if t == 0 || t > spec.n {
        return Err(Error::Validation(format!("time index {t} outside 1..={}", spec.n)));
    }
    joint_smoothing(spec, y)?.marginal(&block_indices(spec.p, t))
}

/// `p(y_{1:n}) = Φ_{m·n}(γ; Γ)` of the joint smoothing distribution.
pub fn marginal_likelihood(spec: &ModelSpec, y: &BinarySeries, cfg: &CdfConfig, seed: u64) -> Result<CdfEstimate> {
    let s = joint_smoothing(spec, y)?;
    if s.h() > 300 {
        log::warn!("marginal likelihood over {} latent dimensions is expensive", s.h());
    }
    mvn_cdf_with(&cfg.problem(s.gamma().clone(), s.big_gamma().clone()), cfg, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(rename = "W11")]
    pub w11: f64,
    #[serde(rename = "W22")]
    pub w22: f64,
    pub loglik: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub argmax: usize,
}

/// Marginal likelihood over a grid of diagonal state-noise variances. The
/// template's `W_t` has its first (and, if `p ≥ 2`, second) diagonal entry
/// replaced; every point uses the same `seed`.
pub fn marglik_grid(
    template: &ModelSpec,
    y: &BinarySeries,
    grid: &[(f64, f64)],
    cfg: &CdfConfig,
    seed: u64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Validation("empty likelihood grid".into()));
    }
    let rows: Vec<GridRow> = grid
        .par_iter()
        .map(|&(w11, w22)| {
            let mut spec = template.clone();
            for w in &mut spec.w {
                w[(0, 0)] = w11;
                if spec.p >= 2 {
                    w[(1, 1)] = w22;
                }
            }
            let e = marginal_likelihood(&spec, y, cfg, seed)?;
            Ok(GridRow {
                w11,
                w22,
                loglik: e.value.ln(),
                std_error: if e.value > 0.0 { e.std_error / e.value } else { f64::INFINITY },
            })
        })
        .collect::<Result<_>>()?;
    let argmax = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.loglik.total_cmp(&b.1.loglik))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(GridResult { rows, argmax })
}
