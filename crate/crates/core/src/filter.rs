//! Exact filtering recursion: every filtering and one-step predictive state
//! distribution is SUN, with latent dimension growing by `m` per observation.

use crate::error::{Error, Result};
use crate::gauss::chol::{chol_solve_mat, chol_spd, symmetrize};
use crate::gauss::tmvn::trandn;
use crate::gauss::{mvn_cdf_with, CdfConfig, CdfEstimate, TmvnConfig, TruncatedMvn};
use crate::model::{signs, ModelSpec};
use crate::sun::SunParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub cdf: CdfConfig,
    /// Latent dimension beyond which a warning suggests a particle filter.
    pub latent_cap: usize,
    pub keep_history: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            cdf: CdfConfig::default(),
            latent_cap: 300,
            keep_history: false,
        }
    }
}

/// The prior `θ_0 ~ N(a0, P0)` as a SUN with no latent dimension.
pub fn prior(spec: &ModelSpec) -> Result<SunParams> {
    SunParams::gaussian(spec.a0.clone(), spec.p0.clone())
}

/// Filtering distribution after the first observation.
pub fn init_filter(spec: &ModelSpec, y1: &[u8]) -> Result<SunParams> {
    let pred = predict_step(&prior(spec)?, spec, 1)?;
    update_step(&pred, spec, y1, 1)
}

/// `p(θ_t | y_{1:t-1})` from `p(θ_{t-1} | y_{1:t-1})`.
pub fn predict_step(prev: &SunParams, spec: &ModelSpec, t: usize) -> Result<SunParams> {
    check_t(spec, t)?;
    if prev.p() != spec.p {
        return Err(Error::Dimension(format!(
            "state dimension {} does not match p = {}",
            prev.p(),
            spec.p
        )));
    }
    let g = spec.g(t);
    let xi = g * prev.xi();
    let big_omega = symmetrize(&(g * prev.big_omega() * g.transpose() + spec.w(t)));
    let mut scaled = g.clone();
    for j in 0..spec.p {
        scaled.column_mut(j).scale_mut(prev.omega()[j]);
    }
    let mut delta = scaled * prev.delta();
    for i in 0..spec.p {
        delta.row_mut(i).scale_mut(1.0 / big_omega[(i, i)].sqrt());
    }
    let out = SunParams::from_parts(xi, big_omega, delta, prev.gamma().clone(), prev.big_gamma().clone())?;
    out.validate().map_err(|e| e.with_context(format!("prediction at t={t}")))?;
    Ok(out)
}

/// `p(θ_t | y_{1:t})` from `p(θ_t | y_{1:t-1})` and `y_t`.
pub fn update_step(pred: &SunParams, spec: &ModelSpec, y: &[u8], t: usize) -> Result<SunParams> {
    check_t(spec, t)?;
    if y.len() != spec.m {
        return Err(Error::Dimension(format!(
            "observation at t={t} has {} entries, model has m = {}",
            y.len(),
            spec.m
        )));
    }
    let out = update_with(pred, spec.f(t), spec.v(t), &signs(y)?)?;
    out.validate().map_err(|e| e.with_context(format!("update at t={t}")))?;
    Ok(out)
}

/// Conditions a SUN on the signs `b` of `z = Fθ + η`, `η ~ N(0, V)`.
pub(crate) fn update_with(pred: &SunParams, f: &DMatrix<f64>, v: &DMatrix<f64>, b: &DVector<f64>) -> Result<SunParams> {
    let (p, h, m) = (pred.p(), pred.h(), f.nrows());
    if f.ncols() != p || v.shape() != (m, m) || b.len() != m {
        return Err(Error::Dimension("observation block shapes do not match the state".into()));
    }
    let om = pred.big_omega();
    let w = pred.omega();
    let of = om * f.transpose(); // p × m
    let s_mat = f * &of + v;
    let s = DVector::from_fn(m, |l, _| s_mat[(l, l)].sqrt());
    if s.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::Matrix("observation scale must be positive".into()));
    }
    let sb = DVector::from_fn(m, |l, _| b[l] / s[l]); // s⁻¹B diagonal
    let mut delta = DMatrix::zeros(p, h + m);
    delta.columns_mut(0, h).copy_from(pred.delta());
    for i in 0..p {
        for l in 0..m {
            delta[(i, h + l)] = of[(i, l)] * sb[l] / w[i];
        }
    }
    let fxi = f * pred.xi();
    let mut gamma = DVector::zeros(h + m);
    gamma.rows_mut(0, h).copy_from(pred.gamma());
    for l in 0..m {
        gamma[h + l] = sb[l] * fxi[l];
    }
    let mut big_gamma = DMatrix::zeros(h + m, h + m);
    big_gamma.view_mut((0, 0), (h, h)).copy_from(pred.big_gamma());
    for a in 0..m {
        for c in 0..m {
            big_gamma[(h + a, h + c)] = if a == c { 1.0 } else { sb[a] * s_mat[(a, c)] * sb[c] };
        }
    }
    if h > 0 {
        let mut fw = f.clone();
        for j in 0..p {
            fw.column_mut(j).scale_mut(w[j]);
        }
        let g21 = fw * pred.delta(); // m × h
        for a in 0..m {
            for c in 0..h {
                let v = sb[a] * g21[(a, c)];
                big_gamma[(h + a, c)] = v;
                big_gamma[(c, h + a)] = v;
            }
        }
    }
    SunParams::from_parts(pred.xi().clone(), om.clone(), delta, gamma, big_gamma)
}

fn check_t(spec: &ModelSpec, t: usize) -> Result<()> {
    if t == 0 || t > spec.n {
        return Err(Error::Validation(format!("time index {t} outside 1..={}", spec.n)));
    }
    Ok(())
}

/// Filtering parameters at `t` by running the recursion from the prior.
pub fn run_filter(spec: &ModelSpec, y: &[Vec<u8>], t: usize) -> Result<SunParams> {
    if y.len() < t {
        return Err(Error::Dimension(format!("need {t} observations, have {}", y.len())));
    }
    let mut cur = prior(spec)?;
    for s in 1..=t {
        let pred = predict_step(&cur, spec, s)?;
        cur = update_step(&pred, spec, &y[s - 1], s)?;
    }
    Ok(cur)
}

/// `P(y_t | y_{1:t-1})` as a ratio of orthant probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    pub prob: f64,
    pub std_error: f64,
    pub numerator: CdfEstimate,
    pub denominator: CdfEstimate,
}

impl Predictive {
    fn ratio(num: CdfEstimate, den: CdfEstimate) -> Result<Self> {
        if !(den.value > 0.0) {
            return Err(Error::Numerical(format!(
                "predictive denominator estimate {} is not positive",
                den.value
            )));
        }
        let prob = num.value / den.value;
        let rel = |e: CdfEstimate| if e.value > 0.0 { e.std_error / e.value } else { 0.0 };
        let std_error = prob * (rel(num).powi(2) + rel(den).powi(2)).sqrt();
        Ok(Self {
            prob,
            std_error,
            numerator: num,
            denominator: den,
        })
    }
}

/// `Φ_{m t}(γ_{t|t}; Γ_{t|t}) / Φ_{m(t-1)}(γ_{t|t-1}; Γ_{t|t-1})`, both with `seed`;
/// an empty latent dimension contributes 1.
pub fn obs_predictive(filt: &SunParams, pred: &SunParams, cfg: &CdfConfig, seed: u64) -> Result<Predictive> {
    Predictive::ratio(filt.normalizer(cfg, seed)?, pred.normalizer(cfg, seed)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterCheckpoint {
    pub t: usize,
    pub params: SunParams,
}

/// Online exact filter. The previous normalising constant is cached so the
/// product of predictive probabilities telescopes to the marginal likelihood.
#[derive(Clone, Debug)]
pub struct ExactFilter {
    spec: ModelSpec,
    cfg: FilterConfig,
    seed: u64,
    t: usize,
    params: SunParams,
    norm: Option<CdfEstimate>,
    history: Vec<SunParams>,
    warned: bool,
}

impl ExactFilter {
    pub fn new(spec: ModelSpec, cfg: FilterConfig, seed: u64) -> Result<Self> {
        spec.check()?;
        let params = prior(&spec)?;
        Ok(Self {
            spec,
            cfg,
            seed,
            t: 0,
            params,
            norm: Some(CdfEstimate::exact(1.0)),
            history: Vec::new(),
            warned: false,
        })
    }

    pub fn resume(spec: ModelSpec, cfg: FilterConfig, seed: u64, cp: FilterCheckpoint) -> Result<Self> {
        spec.check()?;
        if cp.t > spec.n || cp.params.p() != spec.p || cp.params.h() != cp.t * spec.m {
            return Err(Error::Dimension("checkpoint does not match the model".into()));
        }
        Ok(Self {
            spec,
            cfg,
            seed,
            t: cp.t,
            params: cp.params,
            norm: None,
            history: Vec::new(),
            warned: false,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }
    pub fn params(&self) -> &SunParams {
        &self.params
    }
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    pub fn history(&self) -> &[SunParams] {
        &self.history
    }

    pub fn checkpoint(&self) -> FilterCheckpoint {
        FilterCheckpoint {
            t: self.t,
            params: self.params.clone(),
        }
    }

    fn current_norm(&mut self) -> Result<CdfEstimate> {
        if let Some(n) = self.norm {
            return Ok(n);
        }
        let n = self.params.normalizer(&self.cfg.cdf, self.seed)?;
        self.norm = Some(n);
        Ok(n)
    }

    /// One-step-ahead state predictive for the next time index.
    pub fn predicted(&self) -> Result<SunParams> {
        predict_step(&self.params, &self.spec, self.t + 1)
    }

    /// Advances by one observation; returns `P(y_t | y_{1:t-1})` when requested.
    pub fn step(&mut self, y: &[u8], with_predictive: bool) -> Result<Option<Predictive>> {
        let t = self.t + 1;
        let pred = predict_step(&self.params, &self.spec, t)?;
        let filt = update_step(&pred, &self.spec, y, t)?;
        if filt.h() > self.cfg.latent_cap && !self.warned {
            log::warn!(
                "latent dimension {} exceeds {}; exact CDFs get expensive, consider a particle filter",
                filt.h(),
                self.cfg.latent_cap
            );
            self.warned = true;
        }
        let out = if with_predictive {
            let den = self.current_norm()?;
            let num = filt.normalizer(&self.cfg.cdf, self.seed)?;
            self.norm = Some(num);
            Some(Predictive::ratio(num, den)?)
        } else {
            self.norm = None;
            None
        };
        if self.cfg.keep_history {
            self.history.push(filt.clone());
        }
        self.params = filt;
        self.t = t;
        Ok(out)
    }

    /// `P(y_{t+1} = y | y_{1:t})` for a candidate without advancing.
    pub fn candidate_probability(&mut self, y: &[u8]) -> Result<Predictive> {
        let t = self.t + 1;
        let pred = predict_step(&self.params, &self.spec, t)?;
        let filt = update_step(&pred, &self.spec, y, t)?;
        let den = self.current_norm()?;
        Predictive::ratio(filt.normalizer(&self.cfg.cdf, self.seed)?, den)
    }

    /// `P(y_{l,t+1} = 1 | y_{1:t})` for each component `l`.
    pub fn component_probabilities(&mut self) -> Result<Vec<Predictive>> {
        let t = self.t + 1;
        let pred = predict_step(&self.params, &self.spec, t)?;
        let den = self.current_norm()?;
        let (f, v) = (self.spec.f(t).clone(), self.spec.v(t).clone());
        let one = DVector::from_element(1, 1.0);
        (0..self.spec.m)
            .map(|l| {
                let fl = f.rows(l, 1).into_owned();
                let vl = v.view((l, l), (1, 1)).into_owned();
                let filt = update_with(&pred, &fl, &vl, &one)?;
                Predictive::ratio(filt.normalizer(&self.cfg.cdf, self.seed)?, den)
            })
            .collect()
    }
}

/// Optimal importance density `p(θ_t | θ_{t-1}, y_t)` and its weight
/// `p(y_t | θ_{t-1}) = Φ_m(γ; Γ)`.
pub fn optimal_proposal(
    theta_prev: &DVector<f64>,
    spec: &ModelSpec,
    y: &[u8],
    t: usize,
    cfg: &CdfConfig,
    seed: u64,
) -> Result<(SunParams, CdfEstimate)> {
    check_t(spec, t)?;
    let base = SunParams::gaussian(spec.g(t) * theta_prev, spec.w(t).clone())?;
    let params = update_with(&base, spec.f(t), spec.v(t), &signs(y)?)?;
    params.validate()?;
    let weight = params.normalizer(cfg, seed)?;
    Ok((params, weight))
}

/// Particle-independent parts of the optimal proposal at one time step:
/// `Δ`, `Γ`, `c_t` and the factors used for sampling.
#[derive(Clone, Debug)]
pub struct OptimalKernel {
    g: DMatrix<f64>,
    omega: DVector<f64>,
    /// `c⁻¹ B F`
    cbf: DMatrix<f64>,
    big_gamma: DMatrix<f64>,
    /// `ΔΓ⁻¹`
    k: DMatrix<f64>,
    /// Cholesky factor of `Ω̄ - ΔΓ⁻¹Δᵀ`
    l0: DMatrix<f64>,
    tmvn: TmvnConfig,
}

impl OptimalKernel {
    pub fn new(spec: &ModelSpec, y: &[u8], t: usize, tmvn: &TmvnConfig) -> Result<Self> {
        check_t(spec, t)?;
        let base = SunParams::gaussian(DVector::zeros(spec.p), spec.w(t).clone())?;
        let b = signs(y)?;
        let proto = update_with(&base, spec.f(t), spec.v(t), &b)?;
        proto.validate()?;
        let m = spec.m;
        let c = DVector::from_fn(m, |l, _| {
            let fw = spec.f(t).row(l) * spec.w(t) * spec.f(t).row(l).transpose();
            (fw[(0, 0)] + spec.v(t)[(l, l)]).sqrt()
        });
        let mut cbf = spec.f(t).clone();
        for l in 0..m {
            cbf.row_mut(l).scale_mut(b[l] / c[l]);
        }
        let lg = chol_spd(proto.big_gamma())?;
        let k = chol_solve_mat(&lg, &proto.delta().transpose()).transpose();
        let cov0 = symmetrize(&(proto.omega_bar() - &k * proto.delta().transpose()));
        let l0 = chol_spd(&cov0).map_err(|e| Error::Identifiability(e.to_string()))?;
        Ok(Self {
            g: spec.g(t).clone(),
            omega: proto.omega().clone(),
            cbf,
            big_gamma: proto.big_gamma().clone(),
            k,
            l0,
            tmvn: tmvn.clone(),
        })
    }

    pub fn big_gamma(&self) -> &DMatrix<f64> {
        &self.big_gamma
    }

    /// `(ξ, γ)` for a given previous state.
    pub fn location(&self, theta_prev: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let xi = &self.g * theta_prev;
        let gamma = &self.cbf * &xi;
        (xi, gamma)
    }

    /// `Φ_m(γ; Γ)`.
    pub fn weight(&self, gamma: &DVector<f64>, cfg: &CdfConfig, seed: u64) -> Result<f64> {
        Ok(mvn_cdf_with(&cfg.problem(gamma.clone(), self.big_gamma.clone()), cfg, seed)?.value)
    }

    /// One draw `ξ + ω(U₀ + ΔΓ⁻¹U₁)`.
    pub fn draw<R: Rng>(&self, xi: &DVector<f64>, gamma: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let p = xi.len();
        let u1 = if gamma.len() == 1 {
            DVector::from_element(1, trandn(-gamma[0], f64::INFINITY, rng))
        } else {
            TruncatedMvn::lower_orthant(&self.big_gamma, &(-gamma), &self.tmvn)?.sample(rng)?
        };
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = &self.l0 * z + &self.k * u1;
        Ok(xi + self.omega.component_mul(&u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::normal;

    fn scalar(n: usize) -> ModelSpec {
        ModelSpec::scalar(n, 0.0, 1.0, 2.0, 1.0, 1.0, 1.0)
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn first_step_hand_values() {
        let spec = scalar(2);
        let s = init_filter(&spec, &[1]).unwrap();
        close(s.xi()[0], 0.0, 1e-15);
        close(s.big_omega()[(0, 0)], 3.0, 1e-15);
        close(s.delta()[(0, 0)], 3f64.sqrt() / 2.0, 1e-15);
        close(s.gamma()[0], 0.0, 1e-15);
        close(s.big_gamma()[(0, 0)], 1.0, 1e-15);
        let s0 = init_filter(&spec, &[0]).unwrap();
        close(s0.delta()[(0, 0)], -(3f64.sqrt()) / 2.0, 1e-15);
        assert_eq!(s0.big_omega(), s.big_omega());
    }

    #[test]
    fn second_step_hand_values() {
        let spec = scalar(2);
        let f1 = init_filter(&spec, &[1]).unwrap();
        let p2 = predict_step(&f1, &spec, 2).unwrap();
        close(p2.big_omega()[(0, 0)], 5.0, 1e-14);
        close(p2.delta()[(0, 0)], 1.5 / 5f64.sqrt(), 1e-14);
        assert_eq!(p2.gamma(), f1.gamma());
        assert_eq!(p2.big_gamma(), f1.big_gamma());
        let f2 = update_step(&p2, &spec, &[1], 2).unwrap();
        assert_eq!(f2.h(), p2.h() + 1);
        close(f2.delta()[(0, 0)], 1.5 / 5f64.sqrt(), 1e-14);
        close(f2.delta()[(0, 1)], 5f64.sqrt() / 6f64.sqrt(), 1e-14);
        close(f2.big_gamma()[(1, 0)], 1.5 / 6f64.sqrt(), 1e-14);
        close(f2.gamma()[1], 0.0, 1e-15);

        let g2 = update_step(&p2, &spec, &[0], 2).unwrap();
        close(g2.delta()[(0, 1)], -f2.delta()[(0, 1)], 1e-15);
        close(g2.big_gamma()[(1, 0)], -f2.big_gamma()[(1, 0)], 1e-15);
        close(g2.big_gamma()[(1, 1)], f2.big_gamma()[(1, 1)], 1e-15);
    }

    #[test]
    fn identity_propagation_in_small_noise_limit() {
        let mut spec = scalar(3);
        for w in &mut spec.w {
            *w = DMatrix::from_element(1, 1, 1e-12);
        }
        let f1 = init_filter(&spec, &[1]).unwrap();
        let p2 = predict_step(&f1, &spec, 2).unwrap();
        assert!(p2.max_abs_diff(&f1).unwrap() < 1e-6);
    }

    #[test]
    fn first_step_density_matches_bayes_rule() {
        let spec = scalar(1);
        let s = init_filter(&spec, &[1]).unwrap();
        let ev = s.density_evaluator(&CdfConfig::default(), 0).unwrap();
        // posterior ∝ Φ(θ) φ(θ; 0, 3); the normaliser ∫Φ(θ)φ(θ;3) dθ = Φ(0; 1 + 3) = 1/2
        let mut sup: f64 = 0.0;
        for i in 0..2000 {
            let th = -10.0 + 20.0 * i as f64 / 1999.0;
            let oracle = normal::cdf(th) * normal::pdf(th / 3f64.sqrt()) / 3f64.sqrt() / 0.5;
            let v = ev.eval(&DVector::from_element(1, th)).unwrap();
            sup = sup.max((v - oracle).abs());
        }
        assert!(sup < 1e-12, "{sup}");
    }

    #[test]
    fn predictive_values() {
        let spec = scalar(2);
        let mut f = ExactFilter::new(spec, FilterConfig::default(), 0).unwrap();
        let p1 = f.step(&[1], true).unwrap().unwrap();
        close(p1.prob, 0.5, 1e-15);
        let up = f.candidate_probability(&[1]).unwrap();
        let down = f.candidate_probability(&[0]).unwrap();
        close(up.prob, 0.354_893 / 0.5, 2e-6);
        close(up.prob + down.prob, 1.0, 1e-12);
        let comp = f.component_probabilities().unwrap();
        close(comp[0].prob, up.prob, 1e-14);
        let p2 = f.step(&[1], true).unwrap().unwrap();
        close(p2.prob, 0.709_786, 2e-6);
        let f1 = init_filter(f.spec(), &[1]).unwrap();
        let direct = obs_predictive(&f1, &predict_step(&prior(f.spec()).unwrap(), f.spec(), 1).unwrap(), &CdfConfig::default(), 0).unwrap();
        close(direct.prob, 0.5, 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = scalar(3);
        let mut a = ExactFilter::new(spec.clone(), FilterConfig::default(), 1).unwrap();
        a.step(&[1], false).unwrap();
        let json = serde_json::to_string(&a.checkpoint()).unwrap();
        let cp: FilterCheckpoint = serde_json::from_str(&json).unwrap();
        let mut b = ExactFilter::resume(spec, FilterConfig::default(), 1, cp).unwrap();
        a.step(&[0], false).unwrap();
        b.step(&[0], false).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn optimal_proposal_hand_values() {
        let spec = scalar(3);
        let th = DVector::from_element(1, 0.0);
        let (s, w) = optimal_proposal(&th, &spec, &[1], 2, &CdfConfig::default(), 0).unwrap();
        close(s.xi()[0], 0.0, 1e-15);
        close(s.big_omega()[(0, 0)], 2.0, 1e-15);
        close(s.delta()[(0, 0)], (2.0f64 / 3.0).sqrt(), 1e-15);
        close(s.gamma()[0], 0.0, 1e-15);
        close(w.value, 0.5, 1e-15);
        let (_, w0) = optimal_proposal(&th, &spec, &[0], 2, &CdfConfig::default(), 0).unwrap();
        close(w0.value, 0.5, 1e-15);
        let th = DVector::from_element(1, 0.8);
        let a = optimal_proposal(&th, &spec, &[1], 2, &CdfConfig::default(), 0).unwrap().1.value;
        let b = optimal_proposal(&th, &spec, &[0], 2, &CdfConfig::default(), 0).unwrap().1.value;
        close(a + b, 1.0, 1e-15);
    }

    #[test]
    fn kernel_matches_proposal() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.2, 1.0]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let spec = ModelSpec::time_invariant(
            3, f, v, DMatrix::identity(2, 2) * 0.9, DMatrix::identity(2, 2) * 0.5,
            DVector::zeros(2), DMatrix::identity(2, 2),
        );
        let th = DVector::from_vec(vec![0.3, -0.6]);
        let cfg = CdfConfig::default();
        let (s, w) = optimal_proposal(&th, &spec, &[1, 0], 2, &cfg, 4).unwrap();
        let k = OptimalKernel::new(&spec, &[1, 0], 2, &TmvnConfig::default()).unwrap();
        let (xi, gamma) = k.location(&th);
        assert!((xi - s.xi()).amax() < 1e-14);
        assert!((&gamma - s.gamma()).amax() < 1e-14);
        assert!((k.big_gamma() - s.big_gamma()).amax() < 1e-14);
        close(k.weight(&gamma, &cfg, 4).unwrap(), w.value, 1e-14);
    }
}
