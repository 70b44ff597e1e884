//! Evaluation harness: exact marginal densities on grids, Wasserstein-1
//! distances, sampler ranking, functionals and classification metrics.

use crate::error::{Error, Result};
use crate::gauss::normal;
use crate::gauss::{CdfConfig, TmvnConfig};
use crate::model::{BinarySeries, ModelSpec};
use crate::rng;
use crate::sample::{Moments, SampleMatrix};
use crate::samplers::{bootstrap_pf, ekf, filtering_sampler, optimal_pf, rb_pf, PfConfig};
use crate::sun::SunParams;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Density of coordinate `axis` on an equally spaced grid, renormalised so
/// that `sum · spacing = 1`. All points share `seed`.
pub fn grid_density(params: &SunParams, axis: usize, grid: &[f64], cfg: &CdfConfig, seed: u64) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::Validation("density grid needs at least 2 points".into()));
    }
    let spacing = grid[1] - grid[0];
    if !(spacing > 0.0) {
        return Err(Error::Validation("density grid must be increasing".into()));
    }
    let ev = params.marginal(&[axis])?.density_evaluator(cfg, seed)?;
    let mut dens: Vec<f64> = grid
        .par_iter()
        .map(|&x| ev.eval(&DVector::from_element(1, x)))
        .collect::<Result<_>>()?;
    let total: f64 = dens.iter().sum::<f64>() * spacing;
    if !(total > 0.0) {
        return Err(Error::Numerical("density vanishes on the whole grid".into()));
    }
    for d in &mut dens {
        *d /= total;
    }
    Ok(dens)
}

/// `points` equally spaced values over mean ± 6 sd of coordinate `axis`;
/// the moments are estimated from `draws` exact samples.
pub fn default_grid(params: &SunParams, axis: usize, points: usize, draws: usize, seed: u64, tcfg: &TmvnConfig) -> Result<Vec<f64>> {
    let m = params.marginal(&[axis])?.mc_moments(draws, seed, tcfg)?;
    let (mu, sd) = (m.mean[0], m.cov[(0, 0)].sqrt());
    let (lo, hi) = (mu - 6.0 * sd, mu + 6.0 * sd);
    Ok((0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Wasserstein-1 distance between two empirical distributions, `∫ |F_a - F_b|`.
pub fn wasserstein1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Validation("Wasserstein distance of an empty sample".into()));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    if sa.len() == sb.len() {
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64);
    }
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x_prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - x_prev);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        x_prev = x;
    }
    Ok(total)
}

/// `∫ |F_s - G|` between a weighted sample and a density tabulated on an
/// equally spaced grid. `G` is the trapezoid-rule CDF, linear between grid
/// points, 0 left of the grid and 1 right of it; the integral is exact for
/// that piecewise-linear `G`.
pub fn wasserstein_to_grid(values: &[f64], weights: Option<&[f64]>, grid: &[f64], density: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation("Wasserstein distance of an empty sample".into()));
    }
    if grid.len() < 2 || grid.len() != density.len() {
        return Err(Error::Dimension("grid and density lengths differ".into()));
    }
    let n = values.len();
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == n => {
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        }
        Some(_) => return Err(Error::Dimension("weights and values lengths differ".into())),
        None => vec![1.0 / n as f64; n],
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let xs: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let ws: Vec<f64> = order.iter().map(|&i| w[i]).collect();

    let mut cdf = vec![0.0; grid.len()];
    for k in 1..grid.len() {
        cdf[k] = cdf[k - 1] + 0.5 * (density[k] + density[k - 1]) * (grid[k] - grid[k - 1]);
    }
    let total = cdf[grid.len() - 1];
    for c in &mut cdf {
        *c /= total;
    }
    let g_at = |x: f64| -> f64 {
        if x <= grid[0] {
            return 0.0;
        }
        if x >= grid[grid.len() - 1] {
            return 1.0;
        }
        let k = grid.partition_point(|&g| g <= x) - 1;
        let u = (x - grid[k]) / (grid[k + 1] - grid[k]);
        cdf[k] + u * (cdf[k + 1] - cdf[k])
    };
    // breakpoints: every grid node and sample point
    let mut pts: Vec<f64> = grid.iter().copied().chain(xs.iter().copied()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut acc = 0.0;
    let mut j = 0;
    let mut fs = 0.0;
    for k in 0..pts.len() - 1 {
        let (a, b) = (pts[k], pts[k + 1]);
        while j < xs.len() && xs[j] <= a {
            fs += ws[j];
            j += 1;
        }
        // F_s constant and G linear on [a, b]
        let (ga, gb) = (g_at(a) - fs, g_at(b) - fs);
        let len = b - a;
        acc += if ga * gb >= 0.0 {
            0.5 * (ga.abs() + gb.abs()) * len
        } else {
            0.5 * len * (ga * ga + gb * gb) / (ga.abs() + gb.abs())
        };
    }
    Ok(acc)
}

/// Quantiles `qs` of a weighted sample: the smallest value whose cumulative
/// normalised weight reaches `q`. Unit weights when `weights` is `None`.
pub fn weighted_quantiles(values: &[f64], weights: Option<&[f64]>, qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Validation("quantile of an empty sample".into()));
    }
    if weights.is_some_and(|w| w.len() != values.len()) {
        return Err(Error::Dimension("weights and values lengths differ".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..values.len()).map(w).sum();
    let mut cum = Vec::with_capacity(order.len());
    let mut acc = 0.0;
    for &i in &order {
        acc += w(i);
        cum.push(acc / total);
    }
    Ok(qs
        .iter()
        .map(|&q| {
            let k = cum.partition_point(|&c| c < q - 1e-12).min(order.len() - 1);
            values[order[k]]
        })
        .collect())
}

/// Sampling schemes compared by [`ranking_experiment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Iid,
    OptimalPf,
    BootstrapPf,
    RbPf,
    Ekf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Iid => "iid",
            Method::OptimalPf => "opf",
            Method::BootstrapPf => "bpf",
            Method::RbPf => "rbpf",
            Method::Ekf => "ekf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Method::Iid),
            "opf" | "optimal_pf" => Ok(Method::OptimalPf),
            "bpf" | "bootstrap_pf" => Ok(Method::BootstrapPf),
            "rbpf" | "rb_pf" => Ok(Method::RbPf),
            "ekf" => Ok(Method::Ekf),
            other => Err(Error::Validation(format!("unknown method '{other}'"))),
        }
    }
}

/// Weighted draws of `θ_t | y_{1:t}` from one method.
#[derive(Clone, Debug)]
pub struct WeightedDraws {
    pub values: DMatrix<f64>,
    pub weights: Option<Vec<f64>>,
}

/// Filtering draws at each of `times` from one run of `method`.
pub fn method_draws(method: Method, spec: &ModelSpec, y: &BinarySeries, times: &[usize], pf: &PfConfig, seed: u64) -> Result<Vec<WeightedDraws>> {
    let last = times.iter().copied().max().unwrap_or(0);
    if last == 0 || last > spec.n {
        return Err(Error::Validation("target times must lie in 1..=n".into()));
    }
    let spec = spec.truncate(last)?;
    let y = y.head(last);
    let pick = |t: usize, values: DMatrix<f64>, w: &DVector<f64>| WeightedDraws {
        values,
        weights: Some(w.iter().copied().collect::<Vec<f64>>()).filter(|_| t > 0),
    };
    match method {
        Method::Iid => times
            .iter()
            .map(|&t| {
                let s = filtering_sampler(&spec, &y, t, pf.r, rng::derive(seed, &[t as u64]), &pf.tmvn)?;
                Ok(WeightedDraws {
                    values: s.values,
                    weights: None,
                })
            })
            .collect(),
        Method::OptimalPf | Method::BootstrapPf => {
            let run = if method == Method::OptimalPf {
                optimal_pf(&spec, &y, pf, seed)?
            } else {
                bootstrap_pf(&spec, &y, pf, seed)?
            };
            Ok(times
                .iter()
                .map(|&t| {
                    let c = &run.clouds[t - 1];
                    pick(t, c.values.clone(), &c.weights)
                })
                .collect())
        }
        Method::RbPf => {
            let run = rb_pf(&spec, &y, pf, seed)?;
            times
                .iter()
                .map(|&t| {
                    let c = run[t - 1].draw(rng::derive(seed, &[t as u64, 7]))?;
                    Ok(pick(t, c.values, &c.weights))
                })
                .collect()
        }
        Method::Ekf => {
            let run = ekf(&spec, &y)?;
            times
                .iter()
                .map(|&t| {
                    let c = run[t - 1].draw(pf.r, rng::derive(seed, &[t as u64]))?;
                    Ok(WeightedDraws {
                        values: c.values,
                        weights: None,
                    })
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub methods: Vec<Method>,
    pub replications: usize,
    pub pf: PfConfig,
    /// Time indices whose filtering marginals are compared.
    pub times: Vec<usize>,
    pub grid_points: usize,
    pub grid_cdf: CdfConfig,
    /// Exact draws used to place the grid.
    pub grid_draws: usize,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Iid, Method::RbPf, Method::BootstrapPf, Method::Ekf],
            replications: 20,
            pf: PfConfig::with_r(10_000),
            times: Vec::new(),
            grid_points: 2000,
            grid_cdf: CdfConfig::fast(),
            grid_draws: 20_000,
        }
    }
}

/// One distance: replication, time, state coordinate, method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub replication: usize,
    pub t: usize,
    pub coordinate: usize,
    pub method: Method,
    pub distance: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_distance: f64,
    pub rank1_fraction: f64,
    pub mean_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub rows: Vec<DistanceRow>,
    pub summary: Vec<MethodSummary>,
}

/// Exact filtering marginals tabulated on grids, one per `(t, coordinate)`.
#[derive(Clone, Debug)]
pub struct ExactGrid {
    pub t: usize,
    pub coordinate: usize,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

pub fn exact_grids(spec: &ModelSpec, y: &BinarySeries, cfg: &RankingConfig, seed: u64) -> Result<Vec<ExactGrid>> {
    let mut out = Vec::new();
    for &t in &cfg.times {
        let params = crate::filter::run_filter(spec, &y.y, t)?;
        for j in 0..spec.p {
            let gseed = rng::derive(seed, &[t as u64, j as u64]);
            let grid = default_grid(&params, j, cfg.grid_points, cfg.grid_draws, gseed, &cfg.pf.tmvn)?;
            let density = grid_density(&params, j, &grid, &cfg.grid_cdf, gseed)?;
            out.push(ExactGrid {
                t,
                coordinate: j,
                grid,
                density,
            });
        }
    }
    Ok(out)
}

/// Wasserstein distance of every method's marginals to the exact grids, in
/// `replications` independent runs; ranks are within each (replication, t, coordinate).
pub fn ranking_experiment(spec: &ModelSpec, y: &BinarySeries, cfg: &RankingConfig, seed: u64) -> Result<RankingResult> {
    let mut cfg = cfg.clone();
    if cfg.times.is_empty() {
        cfg.times = vec![spec.n];
    }
    if cfg.methods.is_empty() {
        return Err(Error::Validation("no methods to rank".into()));
    }
    let grids = exact_grids(spec, y, &cfg, rng::named(seed, "grid"))?;
    let mut rows = Vec::new();
    for rep in 0..cfg.replications {
        let mut by_method = Vec::with_capacity(cfg.methods.len());
        for (k, &method) in cfg.methods.iter().enumerate() {
            let s = rng::derive(rng::named(seed, "replication"), &[rep as u64, k as u64]);
            by_method.push(method_draws(method, spec, y, &cfg.times, &cfg.pf, s)?);
        }
        for g in &grids {
            let ti = cfg.times.iter().position(|&t| t == g.t).unwrap_or(0);
            let dists: Vec<f64> = by_method
                .iter()
                .map(|draws| {
                    let d = &draws[ti];
                    let col: Vec<f64> = d.values.column(g.coordinate).iter().copied().collect();
                    wasserstein_to_grid(&col, d.weights.as_deref(), &g.grid, &g.density)
                })
                .collect::<Result<_>>()?;
            for (k, &method) in cfg.methods.iter().enumerate() {
                let rank = 1 + dists.iter().filter(|&&d| d < dists[k]).count();
                rows.push(DistanceRow {
                    replication: rep,
                    t: g.t,
                    coordinate: g.coordinate,
                    method,
                    distance: dists[k],
                    rank,
                });
            }
        }
    }
    let summary = cfg
        .methods
        .iter()
        .map(|&method| {
            let mine: Vec<&DistanceRow> = rows.iter().filter(|r| r.method == method).collect();
            let n = mine.len().max(1) as f64;
            MethodSummary {
                method,
                mean_distance: mine.iter().map(|r| r.distance).sum::<f64>() / n,
                rank1_fraction: mine.iter().filter(|r| r.rank == 1).count() as f64 / n,
                mean_rank: mine.iter().map(|r| r.rank as f64).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(RankingResult { rows, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_probability: f64,
    pub observed_frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub rate: f64,
    pub bins: Vec<CalibrationBin>,
}

/// One-step-ahead classification with threshold 0.5 (ties predict 1) and decile calibration.
pub fn classification_report(probs: &[f64], y: &[u8]) -> Result<ClassificationReport> {
    if probs.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} probabilities for {} outcomes",
            probs.len(),
            y.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Validation("probabilities must lie in [0, 1]".into()));
    }
    let correct = probs
        .iter()
        .zip(y)
        .filter(|(&p, &o)| u8::from(p >= 0.5) == o)
        .count();
    let mut bins = Vec::with_capacity(10);
    for k in 0..10 {
        let (lo, hi) = (k as f64 / 10.0, (k + 1) as f64 / 10.0);
        let members: Vec<usize> = (0..probs.len())
            .filter(|&i| probs[i] >= lo && (probs[i] < hi || (k == 9 && probs[i] <= hi)))
            .collect();
        let c = members.len();
        let (mp, of) = if c == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (
                members.iter().map(|&i| probs[i]).sum::<f64>() / c as f64,
                members.iter().map(|&i| f64::from(y[i])).sum::<f64>() / c as f64,
            )
        };
        bins.push(CalibrationBin {
            lower: lo,
            upper: hi,
            count: c,
            mean_probability: mp,
            observed_frequency: of,
        });
    }
    Ok(ClassificationReport {
        rate: correct as f64 / probs.len() as f64,
        bins,
    })
}

/// Registered functionals `g(θ)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Functional {
    /// `θ_j`
    Mean(usize),
    /// sample variance of `θ_j`
    Variance(usize),
    /// `Φ(f·θ)`
    Probit(Vec<f64>),
    /// `1(θ_j > c)`
    Indicator(usize, f64),
}

impl FromStr for Functional {
    type Err = Error;
    /// `mean:j`, `variance:j`, `probit:f1,f2,...`, `indicator:j:c` (0-based `j`).
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownFunctional(s.to_string());
        let mut parts = s.splitn(3, ':');
        let name = parts.next().unwrap_or("");
        let a = parts.next();
        let b = parts.next();
        let idx = |v: Option<&str>| v.and_then(|x| x.parse::<usize>().ok()).ok_or_else(unknown);
        match name {
            "mean" => Ok(Functional::Mean(idx(a)?)),
            "variance" => Ok(Functional::Variance(idx(a)?)),
            "probit" => {
                let f: std::result::Result<Vec<f64>, _> = a.ok_or_else(unknown)?.split(',').map(str::parse).collect();
                Ok(Functional::Probit(f.map_err(|_| unknown())?))
            }
            "indicator" => {
                let c = b.and_then(|x| x.parse::<f64>().ok()).ok_or_else(unknown)?;
                Ok(Functional::Indicator(idx(a)?, c))
            }
            _ => Err(unknown()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `E[g(θ)]` (or the variance) with a jackknife standard error.
pub fn functional_estimate(samples: &SampleMatrix, g: &Functional) -> Result<Estimate> {
    let d = samples.dim();
    let check = |j: usize| {
        if j < d {
            Ok(())
        } else {
            Err(Error::Dimension(format!("coordinate {j} out of range for dimension {d}")))
        }
    };
    let values: DMatrix<f64> = match g {
        Functional::Mean(j) | Functional::Variance(j) => {
            check(*j)?;
            samples.values.columns(*j, 1).into_owned()
        }
        Functional::Probit(f) => {
            if f.len() != d {
                return Err(Error::Dimension(format!("probit vector has {} entries, samples have {d}", f.len())));
            }
            let fv = DVector::from_column_slice(f);
            DMatrix::from_column_slice(samples.count(), 1, (&samples.values * fv).map(normal::cdf).as_slice())
        }
        Functional::Indicator(j, c) => {
            check(*j)?;
            samples.values.columns(*j, 1).map(|v| if v > *c { 1.0 } else { 0.0 })
        }
    };
    let m = Moments::from_rows(&values);
    Ok(match g {
        Functional::Variance(_) => Estimate {
            estimate: m.cov[(0, 0)],
            std_error: m.cov_se[(0, 0)],
        },
        _ => Estimate {
            estimate: m.mean[0],
            std_error: m.mean_se[0],
        },
    })
}
