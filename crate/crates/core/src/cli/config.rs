//! JSON run configuration.

use crate::error::{Error, Result};
use crate::model::{BinarySeries, ModelSpec};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use std::path::Path;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
pub enum Design {
    /// `F` is given explicitly.
    #[default]
    #[serde(rename = "fixed")]
    Fixed,
    /// `F_t = (1, x_t)` built from the covariate columns of the data.
    #[serde(rename = "intercept+covariates")]
    InterceptCovariates,
}

/// Configuration file contents. Missing system matrices take the defaults
/// `a0 = 0`, `P0 = 3·I`, `W = 0.01·I`, `G = I`, `V = I`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub m: Option<usize>,
    #[serde(default)]
    pub design: Design,
    /// Covariate columns used by the intercept+covariates design (default: all).
    pub covariates: Option<Vec<String>>,
    #[serde(rename = "F")]
    pub f: Option<Vec<Vec<f64>>>,
    #[serde(rename = "G")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(rename = "V")]
    pub v: Option<Vec<Vec<f64>>>,
    #[serde(rename = "W")]
    pub w: Option<Vec<Vec<f64>>>,
    pub a0: Option<Vec<f64>>,
    #[serde(rename = "P0")]
    pub p0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub options: RunOptions,
}

/// Run options that command-line flags override.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    pub seed: Option<u64>,
    #[serde(rename = "R")]
    pub r: Option<usize>,
    pub method: Option<String>,
    pub cdf_tol: Option<f64>,
    pub grid: Option<String>,
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        s.push('/');
        match seg {
            Segment::Seq { index } => s.push_str(&index.to_string()),
            Segment::Map { key } => s.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => s.push_str(variant),
            Segment::Unknown => s.push('?'),
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

fn cfg_err(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

pub fn parse_config(text: &str) -> Result<RawConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let ptr = pointer(e.path());
        cfg_err(&ptr, e.into_inner().to_string())
    })
}

pub fn read_config(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn matrix(rows: &[Vec<f64>], ptr: &str, shape: Option<(usize, usize)>) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(cfg_err(ptr, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(cfg_err(&format!("{ptr}/{i}"), format!("row has {} entries, expected {c}", rows[i].len())));
    }
    if let Some((er, ec)) = shape {
        if (r, c) != (er, ec) {
            return Err(cfg_err(ptr, format!("expected a {er}x{ec} matrix, found {r}x{c}")));
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl RawConfig {
    /// Builds the validated model. `data` supplies `n` when the config omits
    /// it and the covariates for the intercept+covariates design.
    pub fn model(&self, data: Option<&BinarySeries>) -> Result<ModelSpec> {
        let n = match (self.n, data) {
            (Some(n), Some(d)) if n != d.n() => {
                return Err(cfg_err("/n", format!("config has n = {n} but the data have {} rows", d.n())));
            }
            (Some(n), _) => n,
            (None, Some(d)) => d.n(),
            (None, None) => return Err(cfg_err("/n", "n is required when no data file is given")),
        };
        if n == 0 {
            return Err(cfg_err("/n", "n must be positive"));
        }
        let (fs, p, m) = match self.design {
            Design::Fixed => {
                let f = self.f.as_ref().ok_or_else(|| cfg_err("/F", "F is required for the fixed design"))?;
                let f = matrix(f, "/F", None)?;
                let (m, p) = f.shape();
                (vec![f; n], p, m)
            }
            Design::InterceptCovariates => {
                if self.f.is_some() {
                    return Err(cfg_err("/F", "F must be omitted for the intercept+covariates design"));
                }
                let d = data.ok_or_else(|| cfg_err("/design", "intercept+covariates needs a data file with covariates"))?;
                let x = select_covariates(d, self.covariates.as_deref())?;
                let k = x.ncols();
                let fs = (0..n)
                    .map(|t| DMatrix::from_fn(1, k + 1, |_, j| if j == 0 { 1.0 } else { x[(t, j - 1)] }))
                    .collect();
                (fs, k + 1, 1)
            }
        };
        if let Some(pp) = self.p {
            if pp != p {
                return Err(cfg_err("/p", format!("p = {pp} but the observation design has {p} columns")));
            }
        }
        if let Some(mm) = self.m {
            if mm != m {
                return Err(cfg_err("/m", format!("m = {mm} but the observation design has {m} rows")));
            }
        }
        let sq = |v: &Option<Vec<Vec<f64>>>, ptr: &str, k: usize, default: DMatrix<f64>| -> Result<DMatrix<f64>> {
            v.as_ref().map_or(Ok(default), |rows| matrix(rows, ptr, Some((k, k))))
        };
        let g = sq(&self.g, "/G", p, DMatrix::identity(p, p))?;
        let w = sq(&self.w, "/W", p, DMatrix::identity(p, p) * 0.01)?;
        let v = sq(&self.v, "/V", m, DMatrix::identity(m, m))?;
        let p0 = sq(&self.p0, "/P0", p, DMatrix::identity(p, p) * 3.0)?;
        let a0 = match &self.a0 {
            Some(a) if a.len() != p => return Err(cfg_err("/a0", format!("expected {p} entries, found {}", a.len()))),
            Some(a) => DVector::from_column_slice(a),
            None => DVector::zeros(p),
        };
        let spec = ModelSpec {
            m,
            p,
            n,
            f: fs,
            v: vec![v; n],
            g: vec![g; n],
            w: vec![w; n],
            a0,
            p0,
        };
        let report = spec.validate();
        if !report.is_pass() {
            let first = &report.violations[0];
            let ptr = match first.field.as_str() {
                "F" | "G" | "V" | "W" | "P0" | "a0" => format!("/{}", first.field),
                _ => "/".to_string(),
            };
            return Err(cfg_err(&ptr, report.to_string()));
        }
        if let Some(d) = data {
            d.check_against(&spec)?;
        }
        Ok(spec)
    }
}

fn select_covariates(d: &BinarySeries, names: Option<&[String]>) -> Result<DMatrix<f64>> {
    let x = d
        .covariates
        .as_ref()
        .ok_or_else(|| cfg_err("/design", "the data file has no covariate columns"))?;
    match names {
        None => Ok(x.clone()),
        Some(names) => {
            let idx: Vec<usize> = names
                .iter()
                .enumerate()
                .map(|(i, nm)| {
                    d.covariate_names
                        .iter()
                        .position(|c| c == nm)
                        .ok_or_else(|| cfg_err(&format!("/covariates/{i}"), format!("no column named '{nm}' in the data")))
                })
                .collect::<Result<_>>()?;
            Ok(DMatrix::from_fn(x.nrows(), idx.len(), |r, c| x[(r, idx[c])]))
        }
    }
}
