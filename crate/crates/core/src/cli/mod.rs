//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 numeric or validation error.

pub mod config;
pub mod io;

use crate::acceptance;
use crate::error::{Error, Result};
use crate::eval::{classification_report, ranking_experiment, weighted_quantiles, Method, RankingConfig};
use crate::filter::{ExactFilter, FilterConfig};
use crate::gauss::normal;
use crate::gauss::{CdfConfig, TmvnConfig};
use crate::model::{simulate, BinarySeries, ModelSpec};
use crate::rng;
use crate::samplers::{bootstrap_pf, ekf, filtering_sampler, optimal_pf, rb_pf, smoothing_sampler, PfConfig};
use crate::smoother::marglik_grid;
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{read_config, RawConfig, RunOptions};
use io::Table;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "probit-sun", version, about = "Exact filtering, smoothing and sampling for dynamic probit models")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON model configuration.
    #[arg(long, global = true, env = "PROBIT_SUN_CONFIG")]
    pub config: Option<PathBuf>,
    /// CSV data file (`y` or `y1..ym`, optional `t`, covariates).
    #[arg(long, global = true, env = "PROBIT_SUN_DATA")]
    pub data: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true, env = "PROBIT_SUN_OUT")]
    pub out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = "PROBIT_SUN_SEED")]
    pub seed: Option<u64>,
    /// Number of draws or particles.
    #[arg(long = "R", global = true, env = "PROBIT_SUN_R")]
    pub r: Option<usize>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "PROBIT_SUN_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, env = "PROBIT_SUN_METHOD")]
    pub method: Option<MethodArg>,
    /// Relative tolerance of Gaussian orthant probabilities.
    #[arg(long = "cdf-tol", global = true, env = "PROBIT_SUN_CDF_TOL")]
    pub cdf_tol: Option<f64>,
    /// marglik: comma-separated variances per axis; evaluate: density grid points.
    #[arg(long, global = true, env = "PROBIT_SUN_GRID")]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Iid,
    Opf,
    Bpf,
    Rbpf,
    Ekf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Iid => Method::Iid,
            MethodArg::Opf => Method::OptimalPf,
            MethodArg::Bpf => Method::BootstrapPf,
            MethodArg::Rbpf => Method::RbPf,
            MethodArg::Ekf => Method::Ekf,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a series from the configured model.
    Simulate {
        /// Also write the latent states and utilities here.
        #[arg(long, env = "PROBIT_SUN_LATENT")]
        latent: Option<PathBuf>,
    },
    /// Per-t filtering summaries (t, coordinate, mean, sd, q25, median, q75).
    Filter,
    /// Smoothing quantile bands from i.i.d. draws (t, coordinate, median, q25, q75).
    Smooth,
    /// One-step-ahead probabilities (t, component, prob, std_error, y).
    Predict,
    /// Marginal likelihood over a grid of state variances.
    Marglik,
    /// Ranking experiment and classification report.
    Evaluate {
        #[arg(long, env = "PROBIT_SUN_REPLICATIONS", default_value_t = 20)]
        replications: usize,
        /// Comma-separated methods to rank (default iid,rbpf,bpf,ekf).
        #[arg(long, env = "PROBIT_SUN_METHODS", value_delimiter = ',', value_enum)]
        methods: Vec<MethodArg>,
        /// Comma-separated target times (default n).
        #[arg(long, env = "PROBIT_SUN_TIMES", value_delimiter = ',')]
        times: Vec<usize>,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Comma-separated criterion numbers (default all).
        #[arg(long, env = "PROBIT_SUN_ONLY", value_delimiter = ',')]
        only: Vec<u8>,
    },
}

/// Resolved options: flags override the config file's `options` block.
#[derive(Debug, Clone)]
struct Ctx {
    common: Common,
    opts: RunOptions,
    raw: Option<RawConfig>,
}

const DEFAULT_R: usize = 10_000;
const DEFAULT_GRID: &str = "0.0001,0.001,0.01,0.1,1";

impl Ctx {
    fn seed(&self) -> u64 {
        self.common.seed.or(self.opts.seed).unwrap_or(0)
    }

    fn r(&self) -> Result<usize> {
        let r = self.common.r.or(self.opts.r).unwrap_or(DEFAULT_R);
        if r < 2 {
            return Err(Error::Validation(format!("R must be at least 2, got {r}")));
        }
        Ok(r)
    }

    fn method(&self, default: Method) -> Result<Method> {
        match (self.common.method, &self.opts.method) {
            (Some(m), _) => Ok(m.into()),
            (None, Some(s)) => s.parse(),
            (None, None) => Ok(default),
        }
    }

    fn cdf(&self) -> Result<CdfConfig> {
        let mut c = CdfConfig::default();
        if let Some(t) = self.common.cdf_tol.or(self.opts.cdf_tol) {
            if !(t > 0.0) {
                return Err(Error::Validation(format!("cdf-tol must be positive, got {t}")));
            }
            c.rel_tol = t;
        }
        Ok(c)
    }

    fn grid(&self) -> Option<String> {
        self.common.grid.clone().or_else(|| self.opts.grid.clone())
    }

    fn raw(&self) -> Result<&RawConfig> {
        self.raw
            .as_ref()
            .ok_or_else(|| Error::Validation("this subcommand needs --config".into()))
    }

    fn data(&self) -> Result<BinarySeries> {
        let p = self
            .common
            .data
            .as_ref()
            .ok_or_else(|| Error::Validation("this subcommand needs --data".into()))?;
        io::read_series(p)
    }

    fn model_and_data(&self) -> Result<(ModelSpec, BinarySeries)> {
        let y = self.data()?;
        let spec = self.raw()?.model(Some(&y))?;
        Ok((spec, y))
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        open_output(self.common.out.as_deref())
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))?,
        )),
        _ => Box::new(std::io::stdout().lock()),
    })
}

fn fmt(x: f64) -> String {
    x.to_string()
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error: 1 for I/O failures, 2 for everything numeric or validation related.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let raw = match &cli.common.config {
        Some(p) => Some(read_config(p)?),
        None => None,
    };
    let ctx = Ctx {
        opts: raw.as_ref().map(|r| r.options.clone()).unwrap_or_default(),
        common: cli.common,
        raw,
    };
    let threads = ctx.common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate { latent } => cmd_simulate(&ctx, latent.as_deref()).map(|()| 0),
        Command::Filter => cmd_filter(&ctx).map(|()| 0),
        Command::Smooth => cmd_smooth(&ctx).map(|()| 0),
        Command::Predict => cmd_predict(&ctx).map(|()| 0),
        Command::Marglik => cmd_marglik(&ctx).map(|()| 0),
        Command::Evaluate {
            replications,
            methods,
            times,
        } => cmd_evaluate(&ctx, *replications, methods, times).map(|()| 0),
        Command::Selftest { only } => cmd_selftest(&ctx, only),
    })
}

fn cmd_simulate(ctx: &Ctx, latent: Option<&Path>) -> Result<()> {
    let raw = ctx.raw()?;
    let seed = rng::named(ctx.seed(), "simulate");
    let template = match &ctx.common.data {
        Some(_) => Some(ctx.data()?),
        None => None,
    };
    let spec_data = match (raw.design, template) {
        (config::Design::InterceptCovariates, None) => {
            // standard normal covariates x1..xk, with k from p (default 1)
            let n = raw.n.ok_or_else(|| Error::Config {
                pointer: "/n".into(),
                message: "n is required when no data file is given".into(),
            })?;
            let k = raw.p.map_or(1, |p| p.saturating_sub(1)).max(1);
            let mut g = rng::substream(rng::named(seed, "covariates"), 0);
            let x = DMatrix::from_fn(n, k, |_, _| g.sample::<f64, _>(StandardNormal));
            let mut d = BinarySeries::new(vec![vec![0]; n])?;
            d.covariates = Some(x);
            d.covariate_names = if k == 1 { vec!["x".into()] } else { (1..=k).map(|i| format!("x{i}")).collect() };
            Some(d)
        }
        (_, t) => t,
    };
    let spec = raw.model(spec_data.as_ref())?;
    let (path, mut y) = simulate(&spec, seed)?;
    if let Some(d) = spec_data {
        y.covariates = d.covariates;
        y.covariate_names = d.covariate_names;
        y.timestamps = d.timestamps;
    }
    let mut out = ctx.output()?;
    io::write_series(&mut out, &y)?;
    out.flush()?;
    if let Some(lp) = latent {
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((1..=spec.p).map(|j| format!("theta{j}")));
        header.extend((1..=spec.m).map(|j| format!("z{j}")));
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut tab = Table::new(open_output(Some(lp))?, &hdr)?;
        for t in 0..spec.n {
            let mut row = vec![(t + 1).to_string()];
            row.extend(path.theta.row(t).iter().map(|&v| fmt(v)));
            row.extend(path.z.row(t).iter().map(|&v| fmt(v)));
            tab.row(&row)?;
        }
        tab.finish()?;
    }
    Ok(())
}

const QS: [f64; 3] = [0.25, 0.5, 0.75];

fn summary_row(t: usize, j: usize, values: &[f64], weights: Option<&[f64]>) -> Result<Vec<String>> {
    let total: f64 = weights.map_or(values.len() as f64, |w| w.iter().sum());
    let wt = |i: usize| weights.map_or(1.0, |w| w[i]) / total;
    let mean: f64 = values.iter().enumerate().map(|(i, v)| wt(i) * v).sum();
    let var: f64 = values.iter().enumerate().map(|(i, v)| wt(i) * (v - mean).powi(2)).sum();
    let q = weighted_quantiles(values, weights, &QS)?;
    Ok(vec![t.to_string(), (j + 1).to_string(), fmt(mean), fmt(var.sqrt()), fmt(q[0]), fmt(q[1]), fmt(q[2])])
}

fn cmd_filter(ctx: &Ctx) -> Result<()> {
    let (spec, y) = ctx.model_and_data()?;
    let method = ctx.method(Method::Iid)?;
    let seed = rng::named(ctx.seed(), "filter");
    let pf = PfConfig {
        cdf: ctx.cdf()?,
        ..PfConfig::with_r(ctx.r()?)
    };
    let mut tab = Table::new(ctx.output()?, &["t", "coordinate", "mean", "sd", "q25", "median", "q75"])?;
    let mut emit = |t: usize, values: &DMatrix<f64>, w: Option<&[f64]>| -> Result<()> {
        for j in 0..spec.p {
            let col: Vec<f64> = values.column(j).iter().copied().collect();
            tab.row(&summary_row(t, j, &col, w)?)?;
        }
        Ok(())
    };
    match method {
        Method::Iid => {
            for t in 1..=spec.n {
                let s = filtering_sampler(&spec, &y, t, pf.r, rng::derive(seed, &[t as u64]), &pf.tmvn)?;
                emit(t, &s.values, None)?;
            }
        }
        Method::OptimalPf | Method::BootstrapPf => {
            let run = if method == Method::OptimalPf {
                optimal_pf(&spec, &y, &pf, seed)?
            } else {
                bootstrap_pf(&spec, &y, &pf, seed)?
            };
            for c in &run.clouds {
                emit(c.t, &c.values, Some(c.weights.as_slice()))?;
            }
        }
        Method::RbPf => {
            for st in rb_pf(&spec, &y, &pf, seed)? {
                let c = st.draw(rng::derive(seed, &[st.t as u64, 7]))?;
                emit(c.t, &c.values, Some(c.weights.as_slice()))?;
            }
        }
        Method::Ekf => {
            // Gaussian marginals: quantiles in closed form
            for st in ekf(&spec, &y)? {
                for j in 0..spec.p {
                    let (mu, sd) = (st.mean[j], st.cov[(j, j)].sqrt());
                    let q: Vec<String> = QS.iter().map(|&q| fmt(mu + sd * normal::quantile(q))).collect();
                    tab.row(&[st.t.to_string(), (j + 1).to_string(), fmt(mu), fmt(sd), q[0].clone(), q[1].clone(), q[2].clone()])?;
                }
            }
        }
    }
    tab.finish()
}

fn cmd_smooth(ctx: &Ctx) -> Result<()> {
    let (spec, y) = ctx.model_and_data()?;
    let s = smoothing_sampler(&spec, &y, ctx.r()?, rng::named(ctx.seed(), "smooth"), &TmvnConfig::default())?;
    let mut tab = Table::new(ctx.output()?, &["t", "coordinate", "median", "q25", "q75"])?;
    for t in 1..=spec.n {
        for j in 0..spec.p {
            let col = s.column((t - 1) * spec.p + j);
            let q = weighted_quantiles(&col, None, &QS)?;
            tab.row(&[t.to_string(), (j + 1).to_string(), fmt(q[1]), fmt(q[0]), fmt(q[2])])?;
        }
    }
    tab.finish()
}

/// One-step-ahead component probabilities `P(y_{lt} = 1 | y_{1:t-1})` for every t.
fn predictive_table(spec: &ModelSpec, y: &BinarySeries, cdf: CdfConfig, seed: u64) -> Result<Vec<(usize, usize, f64, f64, u8)>> {
    let fcfg = FilterConfig {
        cdf,
        ..FilterConfig::default()
    };
    let mut filt = ExactFilter::new(spec.clone(), fcfg, seed)?;
    let mut rows = Vec::new();
    for t in 1..=spec.n {
        for (l, p) in filt.component_probabilities()?.iter().enumerate() {
            rows.push((t, l + 1, p.prob, p.std_error, y.row(t)[l]));
        }
        filt.step(y.row(t), false)?;
    }
    Ok(rows)
}

fn cmd_predict(ctx: &Ctx) -> Result<()> {
    let (spec, y) = ctx.model_and_data()?;
    let rows = predictive_table(&spec, &y, ctx.cdf()?, rng::named(ctx.seed(), "predict"))?;
    let mut tab = Table::new(ctx.output()?, &["t", "component", "prob", "std_error", "y"])?;
    for (t, l, p, se, o) in rows {
        tab.row(&[t.to_string(), l.to_string(), fmt(p), fmt(se), o.to_string()])?;
    }
    tab.finish()
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| Error::Validation(format!("grid value '{v}' is not a positive number")))
        })
        .collect()
}

fn cmd_marglik(ctx: &Ctx) -> Result<()> {
    let (spec, y) = ctx.model_and_data()?;
    let axis = parse_list(&ctx.grid().unwrap_or_else(|| DEFAULT_GRID.to_string()))?;
    let grid: Vec<(f64, f64)> = if spec.p >= 2 {
        axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect()
    } else {
        axis.iter().map(|&a| (a, f64::NAN)).collect()
    };
    let cdf = ctx.cdf()?;
    let res = marglik_grid(&spec, &y, &grid, &cdf, rng::named(ctx.seed(), "marglik"))?;
    let mut tab = Table::new(ctx.output()?, &["W11", "W22", "loglik", "std_error", "argmax"])?;
    for (i, r) in res.rows.iter().enumerate() {
        let w22 = if spec.p >= 2 { fmt(r.w22) } else { String::new() };
        tab.row(&[fmt(r.w11), w22, fmt(r.loglik), fmt(r.std_error), u8::from(i == res.argmax).to_string()])?;
    }
    tab.finish()
}

fn cmd_evaluate(ctx: &Ctx, replications: usize, methods: &[MethodArg], times: &[usize]) -> Result<()> {
    let (spec, y) = ctx.model_and_data()?;
    let seed = rng::named(ctx.seed(), "evaluate");
    let mut cfg = RankingConfig {
        replications,
        times: times.to_vec(),
        pf: PfConfig {
            cdf: ctx.cdf()?,
            ..PfConfig::with_r(ctx.r()?)
        },
        ..RankingConfig::default()
    };
    if !methods.is_empty() {
        cfg.methods = methods.iter().map(|&m| m.into()).collect();
    } else if let Some(m) = ctx.common.method {
        cfg.methods = vec![m.into()];
    }
    if let Some(g) = ctx.grid() {
        cfg.grid_points = g
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 2)
            .ok_or_else(|| Error::Validation(format!("evaluate --grid expects a point count >= 2, got '{g}'")))?;
    }
    let ranking = ranking_experiment(&spec, &y, &cfg, seed)?;
    let pred = predictive_table(&spec, &y, ctx.cdf()?, rng::named(seed, "predict"))?;
    let probs: Vec<f64> = pred.iter().map(|r| r.2).collect();
    let obs: Vec<u8> = pred.iter().map(|r| r.4).collect();
    let classification = classification_report(&probs, &obs)?;

    let mut tab = Table::new(ctx.output()?, &["replication", "t", "coordinate", "method", "distance", "rank"])?;
    for r in &ranking.rows {
        tab.row(&[
            (r.replication + 1).to_string(),
            r.t.to_string(),
            (r.coordinate + 1).to_string(),
            r.method.to_string(),
            fmt(r.distance),
            r.rank.to_string(),
        ])?;
    }
    tab.finish()?;
    let summary = serde_json::json!({
        "ranking": ranking.summary,
        "classification": classification,
        "replications": cfg.replications,
        "R": cfg.pf.r,
        "grid_points": cfg.grid_points,
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match &ctx.common.out {
        Some(p) if p != Path::new("-") => {
            std::fs::write(summary_path(p), text)?;
        }
        _ => eprint!("{text}"),
    }
    Ok(())
}

/// `dir/name.csv` → `dir/name.summary.json`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.summary.json"))
}

fn cmd_selftest(ctx: &Ctx, only: &[u8]) -> Result<i32> {
    if let Some(bad) = only.iter().find(|&&i| !(1..=9).contains(&i)) {
        return Err(Error::Validation(format!("no acceptance criterion {bad}")));
    }
    let outcomes = acceptance::run(only, ctx.seed(), |o| eprintln!("{o}"));
    let mut out = ctx.output()?;
    for o in &outcomes {
        writeln!(out, "{} {} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.name, o.detail)?;
    }
    out.flush()?;
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { 2 })
}

/// Runs every subcommand on a small synthetic problem three times (twice
/// with one worker thread, once with two) and compares the output bytes.
pub fn determinism_check(seed: u64) -> Result<(bool, String)> {
    let dir = std::env::temp_dir().join(format!("probit-sun-determinism-{}-{seed}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let cfg = dir.join("spec.json");
    std::fs::write(&cfg, r#"{"n": 8, "F": [[1.0]], "P0": [[3.0]], "W": [[0.01]]}"#)?;
    let data = dir.join("y.csv");
    let seed_s = seed.to_string();
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate"]),
        ("filter-iid", vec!["filter", "--method", "iid", "--R", "300"]),
        ("filter-opf", vec!["filter", "--method", "opf", "--R", "300"]),
        ("filter-bpf", vec!["filter", "--method", "bpf", "--R", "300"]),
        ("filter-rbpf", vec!["filter", "--method", "rbpf", "--R", "300"]),
        ("filter-ekf", vec!["filter", "--method", "ekf"]),
        ("smooth", vec!["smooth", "--R", "300"]),
        ("predict", vec!["predict"]),
        ("marglik", vec!["marglik", "--grid", "0.001,0.01,0.1"]),
        ("evaluate", vec!["evaluate", "--R", "200", "--replications", "2", "--grid", "100"]),
        ("selftest", vec!["selftest", "--only", "1,7"]),
    ];
    let mut failures = Vec::new();
    let mut names = Vec::new();
    for (name, args) in &cases {
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "1", "2"].iter().enumerate() {
            let out = dir.join(format!("{name}-{k}.csv"));
            let mut argv: Vec<OsString> = vec!["probit-sun".into()];
            argv.extend(args.iter().map(OsString::from));
            for (flag, v) in [
                ("--config", cfg.as_os_str()),
                ("--out", out.as_os_str()),
                ("--seed", std::ffi::OsStr::new(&seed_s)),
                ("--threads", std::ffi::OsStr::new(threads)),
            ] {
                argv.push(flag.into());
                argv.push(v.into());
            }
            if *name != "simulate" && *name != "selftest" {
                argv.push("--data".into());
                argv.push(data.clone().into());
            }
            let code = run(argv);
            if code != 0 {
                failures.push(format!("{name} exited with {code}"));
                break;
            }
            let mut bytes = std::fs::read(&out)?;
            let side = summary_path(&out);
            if side.exists() {
                bytes.extend(std::fs::read(&side)?);
            }
            outputs.push(bytes);
        }
        if *name == "simulate" && outputs.first().is_some() {
            std::fs::write(&data, &outputs[0])?;
        }
        if outputs.len() == 3 && !(outputs[0] == outputs[1] && outputs[1] == outputs[2]) {
            failures.push(format!("{name} output differs between runs"));
        }
        names.push(*name);
    }
    let _ = std::fs::remove_dir_all(&dir);
    let ok = failures.is_empty();
    let detail = if ok {
        format!("{} runs byte-identical across reruns and --threads 1/2 ({})", cases.len(), names.join(", "))
    } else {
        failures.join("; ")
    };
    Ok((ok, detail))
}
