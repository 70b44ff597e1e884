//! The dynamic probit state-space model.
//!
//! ```text
//! y_t = 1(z_t > 0),  z_t = F_t θ_t + η_t,  η_t ~ N_m(0, V_t)
//! θ_t = G_t θ_{t-1} + ε_t,  ε_t ~ N_p(0, W_t),  θ_0 ~ N_p(a0, P0)
//! ```

use crate::error::{Error, Result};
use crate::gauss::chol::{check_symmetric, chol_spd};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;

/// Full model specification with per-t system matrices (indexed from t = 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub f: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub a0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl ModelSpec {
    /// Time-invariant system, broadcast over `n` steps; `m` and `p` are read off `f`.
    pub fn time_invariant(
        n: usize,
        f: DMatrix<f64>,
        v: DMatrix<f64>,
        g: DMatrix<f64>,
        w: DMatrix<f64>,
        a0: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Self {
        Self {
            m: f.nrows(),
            p: f.ncols(),
            n,
            f: vec![f; n],
            v: vec![v; n],
            g: vec![g; n],
            w: vec![w; n],
            a0,
            p0,
        }
    }

    /// One-dimensional state and observation with scalar system values.
    pub fn scalar(n: usize, a0: f64, p0: f64, w: f64, f: f64, g: f64, v: f64) -> Self {
        let s = |x: f64| DMatrix::from_element(1, 1, x);
        Self::time_invariant(n, s(f), s(v), s(g), s(w), DVector::from_element(1, a0), s(p0))
    }

    pub fn f(&self, t: usize) -> &DMatrix<f64> {
        &self.f[t - 1]
    }
    pub fn v(&self, t: usize) -> &DMatrix<f64> {
        &self.v[t - 1]
    }
    pub fn g(&self, t: usize) -> &DMatrix<f64> {
        &self.g[t - 1]
    }
    pub fn w(&self, t: usize) -> &DMatrix<f64> {
        &self.w[t - 1]
    }

    /// The same model over the first `n` steps.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n {
            return Err(Error::Validation(format!(
                "cannot truncate horizon {} to {n}",
                self.n
            )));
        }
        let mut out = self.clone();
        out.n = n;
        out.f.truncate(n);
        out.v.truncate(n);
        out.g.truncate(n);
        out.w.truncate(n);
        Ok(out)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let (m, p, n) = (self.m, self.p, self.n);
        if m == 0 || p == 0 || n == 0 {
            report.push(ViolationKind::Dimension, "dims", None, format!("m={m}, p={p}, n={n} must all be positive"));
        }
        let seqs: [(&str, &Vec<DMatrix<f64>>, (usize, usize), bool); 4] = [
            ("F", &self.f, (m, p), false),
            ("V", &self.v, (m, m), true),
            ("G", &self.g, (p, p), false),
            ("W", &self.w, (p, p), true),
        ];
        for (name, seq, shape, spd) in seqs {
            if seq.len() != n {
                report.push(
                    ViolationKind::Length,
                    name,
                    None,
                    format!("sequence has length {} but horizon is {n}", seq.len()),
                );
            }
            for (i, mat) in seq.iter().enumerate() {
                check_matrix(&mut report, name, Some(i + 1), mat, shape, spd);
            }
        }
        if self.a0.len() != p {
            report.push(ViolationKind::Dimension, "a0", None, format!("length {} but p = {p}", self.a0.len()));
        }
        if self.a0.iter().any(|x| !x.is_finite()) {
            report.push(ViolationKind::NonFinite, "a0", None, "non-finite entry".into());
        }
        check_matrix(&mut report, "P0", None, &self.p0, (p, p), true);
        report
    }

    /// `Ok(())` if the report passes, otherwise a validation error listing every violation.
    pub fn check(&self) -> Result<()> {
        let r = self.validate();
        if r.is_pass() {
            Ok(())
        } else {
            Err(Error::Validation(r.to_string()))
        }
    }
}

fn check_matrix(
    report: &mut ValidationReport,
    name: &str,
    t: Option<usize>,
    mat: &DMatrix<f64>,
    shape: (usize, usize),
    spd: bool,
) {
    if mat.shape() != shape {
        report.push(
            ViolationKind::Dimension,
            name,
            t,
            format!("shape {}x{}, expected {}x{}", mat.nrows(), mat.ncols(), shape.0, shape.1),
        );
        return;
    }
    if mat.iter().any(|x| !x.is_finite()) {
        report.push(ViolationKind::NonFinite, name, t, "non-finite entry".into());
        return;
    }
    if spd {
        if let Err(e) = check_symmetric(mat).and_then(|_| chol_spd(mat)) {
            report.push(ViolationKind::NotSpd, name, t, e.to_string());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Dimension,
    Length,
    NotSpd,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub field: String,
    pub t: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, kind: ViolationKind, field: &str, t: Option<usize>, message: String) {
        self.violations.push(Violation {
            kind,
            field: field.to_string(),
            t,
            message,
        });
    }

    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return write!(f, "pass");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| match v.t {
                Some(t) => format!("{}[t={t}]: {}", v.field, v.message),
                None => format!("{}: {}", v.field, v.message),
            })
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Observed binary series with optional labels and covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySeries {
    /// `n` rows of `m` entries in {0, 1}.
    pub y: Vec<Vec<u8>>,
    pub timestamps: Option<Vec<String>>,
    pub covariates: Option<DMatrix<f64>>,
    pub covariate_names: Vec<String>,
}

impl BinarySeries {
    pub fn new(y: Vec<Vec<u8>>) -> Result<Self> {
        let s = Self {
            y,
            timestamps: None,
            covariates: None,
            covariate_names: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        for (i, row) in self.y.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!(
                    "row {} has {} responses, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|&&v| v > 1) {
                return Err(Error::Validation(format!("non-binary response {bad} at t={}", i + 1)));
            }
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != self.n() {
                return Err(Error::Dimension("timestamp count differs from row count".into()));
            }
        }
        if let Some(x) = &self.covariates {
            if x.nrows() != self.n() {
                return Err(Error::Dimension("covariate row count differs from response rows".into()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    /// Responses at time `t` (1-based).
    pub fn row(&self, t: usize) -> &[u8] {
        &self.y[t - 1]
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Self {
        Self {
            y: self.y[..n].to_vec(),
            timestamps: self.timestamps.as_ref().map(|ts| ts[..n].to_vec()),
            covariates: self.covariates.as_ref().map(|x| x.rows(0, n).into_owned()),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Errors unless the series matches the model's `m` and covers its horizon.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        self.validate()?;
        if self.m() != spec.m {
            return Err(Error::Dimension(format!(
                "data has m = {} responses per row but the model has m = {}",
                self.m(),
                spec.m
            )));
        }
        if self.n() < spec.n {
            return Err(Error::Dimension(format!(
                "data has {} rows but the model horizon is {}",
                self.n(),
                spec.n
            )));
        }
        Ok(())
    }
}

/// Simulated latent quantities: states `θ_{1:n}` (n×p) and utilities `z_{1:n}` (n×m).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPath {
    pub theta: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// `diag(2y - 1)`.
pub fn sign_matrix(y: &[u8]) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_diagonal(&signs(y)?))
}

/// The diagonal of [`sign_matrix`].
pub fn signs(y: &[u8]) -> Result<DVector<f64>> {
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Validation(format!("non-binary response {bad}")));
    }
    Ok(DVector::from_iterator(y.len(), y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 })))
}

fn gaussian_draw<R: Rng>(chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let e = DVector::from_fn(chol.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    chol * e
}

/// Draws a latent path and its dichotomisation. `θ_0` uses stream 0 and step
/// `t` uses stream `t`, so extending the horizon leaves earlier draws intact.
pub fn simulate(spec: &ModelSpec, seed: u64) -> Result<(LatentPath, BinarySeries)> {
    spec.check()?;
    let (m, p, n) = (spec.m, spec.p, spec.n);
    let lp0 = chol_spd(&spec.p0).map_err(|e| e.with_context("P0"))?;
    let mut r0 = rng::substream(seed, 0);
    let mut theta = &spec.a0 + gaussian_draw(&lp0, &mut r0);
    let mut theta_out = DMatrix::zeros(n, p);
    let mut z_out = DMatrix::zeros(n, m);
    let mut y = Vec::with_capacity(n);
    for t in 1..=n {
        let lw = chol_spd(spec.w(t)).map_err(|e| e.with_context(format!("W[t={t}]")))?;
        let lv = chol_spd(spec.v(t)).map_err(|e| e.with_context(format!("V[t={t}]")))?;
        let mut r = rng::substream(seed, t as u64);
        theta = spec.g(t) * &theta + gaussian_draw(&lw, &mut r);
        let z = spec.f(t) * &theta + gaussian_draw(&lv, &mut r);
        theta_out.set_row(t - 1, &theta.transpose());
        z_out.set_row(t - 1, &z.transpose());
        y.push(z.iter().map(|&v| u8::from(v > 0.0)).collect());
    }
    Ok((
        LatentPath {
            theta: theta_out,
            z: z_out,
        },
        BinarySeries::new(y)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_matrix_examples() {
        assert_eq!(sign_matrix(&[1, 0]).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])));
        assert_eq!(sign_matrix(&[1, 1, 1]).unwrap(), DMatrix::identity(3, 3));
        assert_eq!(sign_matrix(&[0, 0]).unwrap(), -DMatrix::<f64>::identity(2, 2));
        assert!(matches!(sign_matrix(&[2]), Err(Error::Validation(_))));
    }

    #[test]
    fn validation_reports() {
        let spec = ModelSpec::scalar(3, 0.0, 1.0, 2.0, 1.0, 1.0, 1.0);
        assert!(spec.validate().is_pass());

        let mut bad = spec.clone();
        bad.v[0] = DMatrix::from_element(1, 1, -1.0);
        let r = bad.validate();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::NotSpd);
        assert_eq!(r.violations[0].field, "V");
        assert_eq!(r.violations[0].t, Some(1));

        let mut short = spec.clone();
        short.f.pop();
        let r = short.validate();
        assert!(r.violations.iter().any(|v| v.kind == ViolationKind::Length && v.field == "F"));

        let mut nan = spec;
        nan.g[2] = DMatrix::from_element(1, 1, f64::NAN);
        assert_eq!(nan.validate().violations[0].kind, ViolationKind::NonFinite);
    }

    #[test]
    fn dominant_mean_gives_all_ones() {
        let spec = ModelSpec::scalar(20, 10.0, 1e-8, 1e-8, 1.0, 1.0, 1e-8);
        let (_, y) = simulate(&spec, 3).unwrap();
        assert!(y.y.iter().all(|r| r[0] == 1));
    }

    #[test]
    fn symmetric_first_observation() {
        let spec = ModelSpec::scalar(1, 0.0, 1.0, 2.0, 1.0, 1.0, 1.0);
        let reps = 100_000;
        let ones: usize = (0..reps)
            .map(|s| simulate(&spec, s as u64).unwrap().1.y[0][0] as usize)
            .sum();
        let freq = ones as f64 / reps as f64;
        let se = (0.25 / reps as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * se, "{freq}");
    }

    #[test]
    fn horizon_extension_keeps_prefix() {
        let spec = ModelSpec::scalar(30, 0.0, 3.0, 0.5, 1.0, 0.9, 1.0);
        let (a, ya) = simulate(&spec.truncate(10).unwrap(), 8).unwrap();
        let (b, yb) = simulate(&spec, 8).unwrap();
        assert_eq!(a.theta, b.theta.rows(0, 10).into_owned());
        assert_eq!(ya.y[..], yb.y[..10]);
    }

    proptest! {
        #[test]
        fn sign_matrix_is_involution(y in prop::collection::vec(0u8..2, 1..6)) {
            let b = sign_matrix(&y).unwrap();
            prop_assert_eq!(&b * &b, DMatrix::identity(y.len(), y.len()));
        }

        #[test]
        fn simulate_is_pure_and_dichotomises(seed in any::<u64>()) {
            let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0]);
            let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
            let spec = ModelSpec::time_invariant(
                8, f, v, DMatrix::identity(2, 2) * 0.9, DMatrix::identity(2, 2) * 0.1,
                DVector::zeros(2), DMatrix::identity(2, 2) * 3.0,
            );
            let (path, y) = simulate(&spec, seed).unwrap();
            prop_assert_eq!(simulate(&spec, seed).unwrap(), (path.clone(), y.clone()));
            for t in 0..8 {
                for l in 0..2 {
                    prop_assert_eq!(y.y[t][l] == 1, path.z[(t, l)] > 0.0);
                }
            }
        }
    }
}
