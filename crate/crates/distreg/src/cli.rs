//! Batch driver for full model runs.
//!
//! A declarative TOML configuration names the data, the per-parameter
//! formulas, the family, and which engines to run; [`run`] executes the
//! pipeline (load → frame → optimizer → sampler → chain statistics →
//! diagnostics → predictions) and writes every artifact into a run
//! directory: `samples.csv`, `summary.txt`, `meta.json`, and one CSV per
//! requested diagnostic or prediction. [`main_from_args`] maps the
//! `fit` / `predict` / `summary` subcommands onto this pipeline and turns
//! error categories into distinct exit codes.
//!
//! Relative paths inside a configuration resolve against the directory
//! containing the configuration file. When no `output` directory is set,
//! runs land in `$DISTREG_OUTPUT_ROOT/<config-stem>-run` (or next to the
//! config when the variable is unset). With a fixed seed the sampler
//! output is reproducible byte for byte; only the `runtime` lines of the
//! summary vary between runs.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::Deserialize;

use crate::data::DataTable;
use crate::design::{build_frame, ModelFrame, TermBlock};
use crate::diagnostics as diag;
use crate::engine::{
    backfit, boost, FitState, BACKFIT_EPS, BACKFIT_MAX_ITER, BOOST_MAXIT, BOOST_NU,
};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::formula::{parse_formula_set, FormulaSet, TermKind};
use crate::predict::{
    effect_curve, predict, Functional, PredictSource, PredictTarget, PredictionRequest,
};
use crate::sampler::{
    gibbs_lm, gmcmc, samplestats, waic, GibbsPrior, McmcOptions, SampleMatrix, SampleStats,
};

/// Environment variable naming the default root for run directories.
pub const OUTPUT_ROOT_ENV: &str = "DISTREG_OUTPUT_ROOT";

// ---------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------

/// Declarative description of one model run.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file with the observations.
    pub data: PathBuf,
    /// Per-parameter model formulas; the first names the response.
    pub formulas: Vec<String>,
    /// Response family: `gaussian`, `binomial`, `ztnbinom`, or `lm`.
    pub family: String,
    /// Mode finder: `bfit`, `boost`, or `none`.
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    /// Chain sampler: `gmcmc`, `gibbs_lm`, or `none`.
    #[serde(default = "default_sampler")]
    pub sampler: String,
    /// Seed for the sampler stream and randomized residuals.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Run directory (relative paths resolve against the config file).
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub engine: EngineSettings,
    /// Conjugate prior, read only when `sampler = "gibbs_lm"`.
    pub gibbs: Option<GibbsSettings>,
    /// Starting coefficients by sample-column name; requires
    /// `optimizer = "none"`.
    #[serde(default)]
    pub start: BTreeMap<String, f64>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    /// Prediction tables to write after fitting.
    #[serde(default)]
    pub prediction: Vec<PredictionConfig>,
}

fn default_optimizer() -> String {
    "bfit".into()
}

fn default_sampler() -> String {
    "gmcmc".into()
}

fn default_seed() -> u64 {
    1
}

/// Iteration controls for both engines; unset fields take the engine
/// defaults (backfitting 400 sweeps at tolerance 1e-4, boosting 1000
/// steps at ν = 0.1, blockwise MH 1200/200/1, conjugate Gibbs
/// 12000/2000/10).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSettings {
    pub n_iter: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    /// Optimizer iteration cap.
    pub maxit: Option<usize>,
    /// Boosting step length.
    pub nu: Option<f64>,
    /// Backfitting convergence tolerance.
    pub eps: Option<f64>,
}

/// Conjugate normal–inverse-gamma prior for the Gibbs sampler. Unset
/// fields keep the vague defaults (zero mean, 1e5·I covariance scale,
/// IG(1, 1e-4)).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsSettings {
    /// Prior coefficient mean: scalar broadcast or one value per column.
    pub m: Option<MeanSpec>,
    /// Prior covariance scale: scalar diagonal or full matrix.
    #[serde(rename = "M")]
    pub m_cov: Option<CovSpec>,
    /// Inverse-gamma shape.
    pub a: Option<f64>,
    /// Inverse-gamma scale.
    pub b: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Diagonal(f64),
    Matrix(Vec<Vec<f64>>),
}

/// Which diagnostic tables to write. Chain-based diagnostics (`acf`,
/// `waic`) need a sampler; `crps` needs a continuous family and
/// `rootogram` a count family.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Quantile residuals (`residuals.csv`) plus their normal KS distance.
    #[serde(default)]
    pub residuals: bool,
    /// Per-observation scores (`crps.csv`).
    #[serde(default)]
    pub crps: bool,
    /// Observed/expected count frequencies (`rootogram.csv`).
    #[serde(default)]
    pub rootogram: bool,
    /// Upper rootogram bin; defaults to the largest observed count.
    pub max_count: Option<u64>,
    /// Chain autocorrelations (`acf.csv`).
    #[serde(default)]
    pub acf: bool,
    /// Largest autocorrelation lag (default 20).
    pub max_lag: Option<usize>,
    /// Record WAIC in the sidecar (pointwise families only).
    #[serde(default)]
    pub waic: bool,
}

/// One prediction table. `target` is `parameter`, `link`, `term`, or
/// `curve`; `functional` is `mean`, `c95`, or `identity`. Curve requests
/// evaluate one smooth term of one parameter over a grid spanning its
/// training range and always export (x, q2.5, mean, q97.5).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    /// Output file `prediction_<name>.csv` (or `curve_<name>.csv`).
    pub name: String,
    /// New observations; defaults to the training table.
    pub newdata: Option<PathBuf>,
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default = "default_functional")]
    pub functional: String,
    /// Term labels (smooth labels or parametric column names) for
    /// `link`/`term` targets.
    pub terms: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub include_intercept: bool,
    /// Parameter name for `curve` requests.
    pub param: Option<String>,
    /// Smooth-term label for `curve` requests.
    pub term: Option<String>,
    /// Grid size for `curve` requests (default 100).
    pub n_grid: Option<usize>,
}

fn default_target() -> String {
    "parameter".into()
}

fn default_functional() -> String {
    "mean".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OptimizerChoice {
    Bfit,
    Boost,
    None,
}

impl OptimizerChoice {
    fn parse(text: &str) -> Result<Self> {
        match text {
            "bfit" => Ok(OptimizerChoice::Bfit),
            "boost" => Ok(OptimizerChoice::Boost),
            "none" => Ok(OptimizerChoice::None),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected bfit, boost, or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SamplerChoice {
    Gmcmc,
    GibbsLm,
    None,
}

impl SamplerChoice {
    fn parse(text: &str) -> Result<Self> {
        match text {
            "gmcmc" => Ok(SamplerChoice::Gmcmc),
            "gibbs_lm" => Ok(SamplerChoice::GibbsLm),
            "none" => Ok(SamplerChoice::None),
            other => Err(Error::Config(format!(
                "unknown sampler `{other}` (expected gmcmc, gibbs_lm, or none)"
            ))),
        }
    }
}

/// A parsed configuration with every relative path resolved and the run
/// directory decided.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub cfg: RunConfig,
    /// Directory receiving all artifacts.
    pub dir: PathBuf,
    /// Invocation line echoed at the top of the summary.
    pub call: String,
}

/// Reads and validates a configuration file. Relative `data`, `newdata`,
/// and `output` paths resolve against the config file's directory; a
/// missing `output` falls back to `$DISTREG_OUTPUT_ROOT/<stem>-run`.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;

    let optimizer = OptimizerChoice::parse(&cfg.optimizer)?;
    let sampler = SamplerChoice::parse(&cfg.sampler)?;
    if optimizer == OptimizerChoice::None && sampler == SamplerChoice::None {
        return Err(Error::Config(
            "at least one of optimizer/sampler must be enabled".into(),
        ));
    }
    if !cfg.start.is_empty() && optimizer != OptimizerChoice::None {
        return Err(Error::Config(
            "explicit start values require optimizer = \"none\"".into(),
        ));
    }
    for p in &cfg.prediction {
        if p.name.is_empty() {
            return Err(Error::Config("prediction requests need a non-empty name".into()));
        }
    }

    let base = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());

    cfg.data = base.join(&cfg.data);
    for p in &mut cfg.prediction {
        if let Some(nd) = p.newdata.take() {
            p.newdata = Some(base.join(nd));
        }
    }
    let dir = match &cfg.output {
        Some(out) => base.join(out),
        None => std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| base.clone())
            .join(format!("{stem}-run")),
    };
    let call = format!(
        "fit {}",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or(stem)
    );
    Ok(LoadedConfig { cfg, dir, call })
}

// ---------------------------------------------------------------------
// the pipeline
// ---------------------------------------------------------------------

/// Everything a finished run produced, with the artifacts already on
/// disk under `dir`.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    /// The text written to `summary.txt`.
    pub summary: String,
    pub frame: ModelFrame,
    pub mode: Option<FitState>,
    pub samples: Option<SampleMatrix>,
    pub stats: Option<SampleStats>,
}

/// Runs the configuration file at `path` end to end.
pub fn run(path: &Path) -> Result<RunArtifacts> {
    run_loaded(load_config(path)?)
}

/// Runs an already-loaded configuration.
pub fn run_loaded(loaded: LoadedConfig) -> Result<RunArtifacts> {
    let LoadedConfig { cfg, dir, call } = loaded;
    let optimizer = OptimizerChoice::parse(&cfg.optimizer)?;
    let sampler = SamplerChoice::parse(&cfg.sampler)?;
    let family = Family::by_name(&cfg.family)?;
    let fs = parse_formula_set(&cfg.formulas, &family)?;

    if sampler == SamplerChoice::GibbsLm {
        if family.name() != "lm" {
            return Err(Error::Config(format!(
                "gibbs_lm requires the lm family, not `{}`",
                family.name()
            )));
        }
        let nonparametric = fs.formulas.iter().any(|f| {
            f.terms
                .iter()
                .any(|t| matches!(t.kind, TermKind::Smooth { .. } | TermKind::Special { .. }))
        });
        if nonparametric {
            return Err(Error::Config(
                "gibbs_lm requires a purely parametric formula".into(),
            ));
        }
    }

    let table = DataTable::from_csv_path(&cfg.data)?;
    let frame = build_frame(&fs, &table, family)?;

    // mode fit
    let e = &cfg.engine;
    let t0 = Instant::now();
    let mode = match optimizer {
        OptimizerChoice::Bfit => Some(backfit(
            &frame,
            e.maxit.unwrap_or(BACKFIT_MAX_ITER),
            e.eps.unwrap_or(BACKFIT_EPS),
        )?),
        OptimizerChoice::Boost => Some(boost(
            &frame,
            e.maxit.unwrap_or(BOOST_MAXIT),
            e.nu.unwrap_or(BOOST_NU),
        )?),
        OptimizerChoice::None => None,
    };
    let optimizer_runtime = mode.as_ref().map(|_| t0.elapsed().as_secs_f64());

    // chain
    let mut sampler_runtime = None;
    let samples = match sampler {
        SamplerChoice::None => None,
        SamplerChoice::Gmcmc => {
            let d = McmcOptions::default();
            let opt = McmcOptions {
                n_iter: e.n_iter.unwrap_or(d.n_iter),
                burnin: e.burnin.unwrap_or(d.burnin),
                thin: e.thin.unwrap_or(d.thin),
                seed: cfg.seed,
            };
            let start = match &mode {
                Some(m) => m.clone(),
                None => {
                    let mut s = FitState::init(&frame);
                    for (name, value) in &cfg.start {
                        s.set_coef(&frame, name, *value)?;
                    }
                    s
                }
            };
            let t = Instant::now();
            let s = gmcmc(&frame, &start, &opt)?;
            sampler_runtime = Some(t.elapsed().as_secs_f64());
            Some(s)
        }
        SamplerChoice::GibbsLm => {
            let d = McmcOptions::gibbs_default();
            let opt = McmcOptions {
                n_iter: e.n_iter.unwrap_or(d.n_iter),
                burnin: e.burnin.unwrap_or(d.burnin),
                thin: e.thin.unwrap_or(d.thin),
                seed: cfg.seed,
            };
            let block = &frame.params[0].parametric;
            let prior = build_gibbs_prior(cfg.gibbs.as_ref(), block.n_coef())?;
            let start_beta = match &mode {
                Some(m) => Some(m.params[0].parametric.beta.clone()),
                None if !cfg.start.is_empty() => {
                    let mut s = FitState::init(&frame);
                    for (name, value) in &cfg.start {
                        s.set_coef(&frame, name, *value)?;
                    }
                    Some(s.params[0].parametric.beta.clone())
                }
                None => None,
            };
            let t = Instant::now();
            let s = gibbs_lm(
                block.x.view(),
                frame.y.view(),
                &block.colnames,
                &prior,
                start_beta.as_ref().map(|b| b.view()),
                &opt,
            )?;
            sampler_runtime = Some(t.elapsed().as_secs_f64());
            Some(s)
        }
    };

    let stats = match &samples {
        Some(s) => Some(samplestats(s, &frame)?),
        None => None,
    };

    std::fs::create_dir_all(&dir)?;
    if let Some(s) = &samples {
        s.write_csv(&dir.join("samples.csv"))?;
    }

    // fitted distribution parameters feeding the diagnostics
    let par: Vec<Array1<f64>> = match (&samples, &mode) {
        (Some(s), _) => diag::posterior_mean_parameters(s, &frame)?,
        (None, Some(m)) => diag::fitted_parameters(m, &frame),
        (None, None) => unreachable!("validated: at least one engine runs"),
    };

    let mut diag_meta = serde_json::Map::new();
    let d = &cfg.diagnostics;
    if d.residuals {
        let set = diag::quantile_residuals(&frame, &par, cfg.seed)?;
        let values: Vec<f64> = set.residuals.to_vec();
        write_named_columns(
            &dir.join("residuals.csv"),
            &["residual".to_string()],
            &[&values],
        )?;
        diag_meta.insert(
            "ks_distance".into(),
            serde_json::json!(diag::ks_distance_normal(&values)),
        );
    }
    if d.crps {
        let scores = diag::crps_numeric(&frame, &par)?;
        let values: Vec<f64> = scores.to_vec();
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        write_named_columns(&dir.join("crps.csv"), &["crps".to_string()], &[&values])?;
        diag_meta.insert("crps_mean".into(), serde_json::json!(mean));
    }
    if d.rootogram {
        let max_count = match d.max_count {
            Some(m) => m,
            None => frame.y.iter().fold(0.0f64, |acc, v| acc.max(*v)) as u64,
        };
        let rg = diag::rootogram_freq(&frame, &par, max_count)?;
        let counts: Vec<f64> = rg.counts.iter().map(|c| *c as f64).collect();
        let observed: Vec<f64> = rg.observed.iter().map(|c| *c as f64).collect();
        write_named_columns(
            &dir.join("rootogram.csv"),
            &["count".to_string(), "observed".to_string(), "expected".to_string()],
            &[&counts, &observed, &rg.expected],
        )?;
    }
    if d.acf {
        let s = samples.as_ref().ok_or_else(|| {
            Error::Config("acf diagnostics need a sampler-producing run".into())
        })?;
        let max_lag = d.max_lag.unwrap_or(20);
        let summary = diag::acf_summary(s.data.view(), max_lag)?;
        let mut headers = vec!["lag".to_string()];
        headers.extend(s.colnames.iter().cloned());
        headers.push("max_abs".to_string());
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(headers.len());
        columns.push((0..=max_lag).map(|l| l as f64).collect());
        for j in 0..s.colnames.len() {
            columns.push(summary.acf.column(j).to_vec());
        }
        columns.push(summary.max_abs.clone());
        let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        write_named_columns(&dir.join("acf.csv"), &headers, &refs)?;
    }
    if d.waic {
        let s = samples.as_ref().ok_or_else(|| {
            Error::Config("waic needs a sampler-producing run".into())
        })?;
        let w = waic(s, &frame)?;
        diag_meta.insert("waic".into(), serde_json::json!(w.waic));
        diag_meta.insert("p_waic".into(), serde_json::json!(w.p_waic));
    }

    // prediction tables
    let source = match (&samples, &mode) {
        (Some(s), _) => PredictSource::Samples(s),
        (None, Some(m)) => PredictSource::Mode(m),
        (None, None) => unreachable!(),
    };
    for req in &cfg.prediction {
        write_prediction(&dir, source, &frame, &table, req)?;
    }

    let summary = summarize(
        &call,
        &frame,
        mode.as_ref(),
        samples.as_ref(),
        stats.as_ref(),
        optimizer_runtime,
        sampler_runtime,
    );
    std::fs::write(dir.join("summary.txt"), &summary)?;

    let meta = build_meta(&cfg, &frame, mode.as_ref(), samples.as_ref(), stats.as_ref(),
        optimizer_runtime, sampler_runtime, diag_meta);
    let meta_text = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Config(format!("meta serialization: {e}")))?;
    std::fs::write(dir.join("meta.json"), meta_text)?;

    Ok(RunArtifacts { dir, summary, frame, mode, samples, stats })
}

fn build_gibbs_prior(settings: Option<&GibbsSettings>, p: usize) -> Result<GibbsPrior> {
    let mut prior = GibbsPrior::vague(p);
    let Some(s) = settings else { return Ok(prior) };
    match &s.m {
        None => {}
        Some(MeanSpec::Scalar(v)) => prior.m.fill(*v),
        Some(MeanSpec::Vector(v)) => {
            if v.len() != p {
                return Err(Error::Config(format!(
                    "gibbs prior mean has {} entries but the design has {p} columns",
                    v.len()
                )));
            }
            prior.m = Array1::from_vec(v.clone());
        }
    }
    match &s.m_cov {
        None => {}
        Some(CovSpec::Diagonal(v)) => {
            if !(*v > 0.0) {
                return Err(Error::Config(format!(
                    "gibbs prior covariance scale must be positive, got {v}"
                )));
            }
            prior.m_cov = Array2::eye(p) * *v;
        }
        Some(CovSpec::Matrix(rows)) => {
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(Error::Config(format!(
                    "gibbs prior covariance must be {p}x{p}"
                )));
            }
            let mut m = Array2::zeros((p, p));
            for (i, row) in rows.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    m[[i, j]] = *v;
                }
            }
            prior.m_cov = m;
        }
    }
    if let Some(a) = s.a {
        prior.a = a;
    }
    if let Some(b) = s.b {
        prior.b = b;
    }
    Ok(prior)
}

fn parse_target(text: &str) -> Result<PredictTarget> {
    match text {
        "parameter" => Ok(PredictTarget::Parameter),
        "link" => Ok(PredictTarget::Link),
        "term" => Ok(PredictTarget::Term),
        other => Err(Error::Config(format!(
            "unknown prediction target `{other}` (expected parameter, link, term, or curve)"
        ))),
    }
}

fn parse_functional(text: &str) -> Result<Functional> {
    match text {
        "mean" => Ok(Functional::Mean),
        "c95" => Ok(Functional::C95),
        "identity" => Ok(Functional::Identity),
        other => Err(Error::Config(format!(
            "unknown functional `{other}` (expected mean, c95, or identity)"
        ))),
    }
}

fn write_prediction(
    dir: &Path,
    source: PredictSource,
    frame: &ModelFrame,
    training: &DataTable,
    req: &PredictionConfig,
) -> Result<()> {
    if req.target == "curve" {
        let param = req.param.as_deref().ok_or_else(|| {
            Error::Config(format!("curve request `{}` needs a param name", req.name))
        })?;
        let label = req.term.as_deref().ok_or_else(|| {
            Error::Config(format!("curve request `{}` needs a smooth-term label", req.name))
        })?;
        let k = frame
            .params
            .iter()
            .position(|p| p.name == param)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{param}`")))?;
        let curve = effect_curve(source, frame, k, label, req.n_grid.unwrap_or(100))?;
        let x = curve.x.to_vec();
        let lo = curve.lo.to_vec();
        let mean = curve.mean.to_vec();
        let hi = curve.hi.to_vec();
        return write_named_columns(
            &dir.join(format!("curve_{}.csv", req.name)),
            &["x".to_string(), "q2.5".to_string(), "mean".to_string(), "q97.5".to_string()],
            &[&x, &lo, &mean, &hi],
        );
    }

    let request = PredictionRequest {
        target: parse_target(&req.target)?,
        terms: req.terms.clone(),
        include_intercept: req.include_intercept,
        functional: parse_functional(&req.functional)?,
    };
    let newdata_owned;
    let newdata: &DataTable = match &req.newdata {
        Some(path) => {
            newdata_owned = DataTable::from_csv_path(path)?;
            &newdata_owned
        }
        None => training,
    };
    let preds = predict(source, frame, newdata, &request)?;
    let mut headers = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for pp in &preds {
        for (j, cname) in pp.colnames.iter().enumerate() {
            headers.push(format!("{}.{}", pp.param, cname));
            columns.push(pp.data.column(j).to_vec());
        }
    }
    let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    write_named_columns(&dir.join(format!("prediction_{}.csv", req.name)), &headers, &refs)
}

/// Writes equal-length columns as CSV, every value in shortest
/// round-trip decimal form.
fn write_named_columns(path: &Path, headers: &[String], columns: &[&[f64]]) -> Result<()> {
    let n = columns.first().map(|c| c.len()).unwrap_or(0);
    debug_assert!(columns.iter().all(|c| c.len() == n));
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{}", headers.join(","))?;
    for i in 0..n {
        let mut first = true;
        for col in columns {
            if !first {
                write!(out, ",")?;
            }
            write!(out, "{}", col[i])?;
            first = false;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_meta(
    cfg: &RunConfig,
    frame: &ModelFrame,
    mode: Option<&FitState>,
    samples: Option<&SampleMatrix>,
    stats: Option<&SampleStats>,
    optimizer_runtime: Option<f64>,
    sampler_runtime: Option<f64>,
    diagnostics: serde_json::Map<String, serde_json::Value>,
) -> serde_json::Value {
    let mode_json = mode.map(|m| {
        let mut coefficients = serde_json::Map::new();
        for (name, value) in frame.coef_names().iter().zip(m.flat_coefs()) {
            coefficients.insert(name.clone(), serde_json::json!(value));
        }
        let mut tau2 = serde_json::Map::new();
        for (name, value) in frame.tau2_names().iter().zip(m.flat_tau2()) {
            tau2.insert(name.clone(), serde_json::json!(value));
        }
        serde_json::json!({
            "loglik": m.loglik,
            "logpost": m.logpost,
            "edf": m.edf,
            "aicc": m.aicc,
            "converged": m.converged,
            "iterations": m.iterations,
            "coefficients": coefficients,
            "tau2": tau2,
        })
    });
    let mcmc_json = samples.map(|s| {
        let rates: Vec<serde_json::Value> = s
            .block_rates
            .iter()
            .map(|r| serde_json::json!({"id": r.id, "rate": r.rate}))
            .collect();
        serde_json::json!({
            "n_iter": s.n_iter,
            "burnin": s.burnin,
            "thin": s.thin,
            "nsave": s.nsave(),
            "seed": s.seed,
            "block_rates": rates,
        })
    });
    let stats_json = stats.map(|s| {
        serde_json::json!({
            "dic": s.dic,
            "pd": s.pd,
            "loglik_mean": -(s.dic - s.pd) / 2.0,
            "loglik_at_mean": s.loglik,
        })
    });
    serde_json::json!({
        "family": frame.family.name(),
        "response": frame.formulas.response,
        "formulas": cfg.formulas,
        "n_obs": frame.n,
        "n_dropped": frame.n_dropped,
        "optimizer": cfg.optimizer,
        "sampler": cfg.sampler,
        "seed": cfg.seed,
        "mode": mode_json,
        "mcmc": mcmc_json,
        "chain_stats": stats_json,
        "diagnostics": diagnostics,
        "runtime": {
            "optimizer": optimizer_runtime,
            "sampler": sampler_runtime,
        },
    })
}

// ---------------------------------------------------------------------
// the text report
// ---------------------------------------------------------------------

/// One printed value: rounded to 4 decimals, then capped at 7
/// significant digits, trailing zeros dropped.
fn fmt_stat(v: f64) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 {
        return "0".into();
    }
    let digits = (6 - r.abs().log10().floor() as i32).min(4);
    let scale = 10f64.powi(digits);
    format!("{}", (r * scale).round() / scale)
}

/// Wall-clock seconds at millisecond precision.
fn fmt_runtime(v: f64) -> String {
    format!("{}", (v * 1e3).round() / 1e3)
}

/// Reconstructs the display form of parameter `k`'s bound formula.
fn formula_text(fs: &FormulaSet, k: usize) -> String {
    let f = fs.formula(k);
    let lhs = if k == 0 { fs.response.clone() } else { fs.param_names[k].clone() };
    let labels: Vec<String> = f
        .terms
        .iter()
        .filter(|t| t.kind != TermKind::Intercept)
        .map(|t| t.label())
        .collect();
    let rhs = if labels.is_empty() { "1".to_string() } else { labels.join(" + ") };
    let mut text = format!("{lhs} ~ {rhs}");
    if !f.has_intercept() && !labels.is_empty() {
        text.push_str(" - 1");
    }
    text
}

struct TableRow {
    name: String,
    /// Mean, 2.5%, 50%, 97.5% over the chain.
    chain: Option<[f64; 4]>,
    mode: Option<f64>,
    /// Print `NA` in the mode column (alpha and sampled-scale rows).
    mode_na: bool,
}

fn chain_summary(samples: &SampleMatrix, name: &str) -> Option<[f64; 4]> {
    let col = samples.column(name)?;
    if col.is_empty() || col.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mean = col.sum() / col.len() as f64;
    let mut sorted: Vec<f64> = col.iter().copied().collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Some([
        mean,
        diag::quantile_type7(&sorted, 0.025),
        diag::quantile_type7(&sorted, 0.5),
        diag::quantile_type7(&sorted, 0.975),
    ])
}

/// Renders one aligned coefficient table: chain columns at 5 decimals,
/// the mode (`parameters`) column at 3.
fn render_table(rows: &[TableRow], has_chain: bool, has_mode: bool) -> String {
    let mut headers: Vec<&str> = Vec::new();
    if has_chain {
        headers.extend(["Mean", "2.5%", "50%", "97.5%"]);
    }
    if has_mode {
        headers.push("parameters");
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = Vec::new();
            if has_chain {
                match r.chain {
                    Some(q) => v.extend(q.iter().map(|x| format!("{x:.5}"))),
                    None => v.extend(std::iter::repeat("NA".to_string()).take(4)),
                }
            }
            if has_mode {
                v.push(if r.mode_na {
                    "NA".into()
                } else {
                    match r.mode {
                        Some(m) => format!("{m:.3}"),
                        None => "NA".into(),
                    }
                });
            }
            v
        })
        .collect();
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (j, c) in row.iter().enumerate() {
            widths[j] = widths[j].max(c.len());
        }
    }
    let mut out = String::new();
    out.push_str(&" ".repeat(name_w));
    for (j, h) in headers.iter().enumerate() {
        out.push_str(&format!("  {:>w$}", h, w = widths[j]));
    }
    out.push('\n');
    for (row, line) in rows.iter().zip(cells.iter()) {
        out.push_str(&format!("{:<name_w$}", row.name));
        for (j, c) in line.iter().enumerate() {
            out.push_str(&format!("  {:>w$}", c, w = widths[j]));
        }
        out.push('\n');
    }
    out
}

/// Builds the full text report: the call line, family and links, one
/// block per distribution parameter (bound formula, parametric and
/// smooth coefficient tables, acceptance-rate row for sampled fits),
/// then the sampler and optimizer summaries that ran.
pub fn summarize(
    call: &str,
    frame: &ModelFrame,
    mode: Option<&FitState>,
    samples: Option<&SampleMatrix>,
    stats: Option<&SampleStats>,
    optimizer_runtime: Option<f64>,
    sampler_runtime: Option<f64>,
) -> String {
    let has_chain = samples.is_some();
    let has_mode = mode.is_some();
    let mut text = String::new();
    text.push_str("Call:\n");
    text.push_str(call);
    text.push('\n');
    text.push_str("---\n");
    text.push_str(&format!("Family: {} \n", frame.family.name()));
    text.push_str(&format!("Link function: {}\n", frame.family.link_display()));

    for (k, param) in frame.params.iter().enumerate() {
        text.push_str("*---\n");
        text.push_str(&format!("Formula {}:\n", param.name));
        text.push_str("---\n");
        text.push_str(&format!("{}\n", formula_text(&frame.formulas, k)));
        text.push_str("-\n");

        let mut parametric_rows: Vec<TableRow> = param
            .parametric
            .colnames
            .iter()
            .enumerate()
            .map(|(j, col)| TableRow {
                name: col.clone(),
                chain: samples.and_then(|s| chain_summary(s, &format!("{}.p.{col}", param.name))),
                mode: mode.map(|m| m.params[k].parametric.beta[j]),
                mode_na: false,
            })
            .collect();

        let mut smooth_rows: Vec<TableRow> = Vec::new();
        for (j, term) in param.terms.iter().enumerate() {
            match term {
                TermBlock::Smooth(b) => {
                    smooth_rows.push(TableRow {
                        name: format!("{}.tau21", b.label),
                        chain: samples.and_then(|s| {
                            chain_summary(s, &format!("{}.s.{}.tau21", param.name, b.label))
                        }),
                        mode: mode.map(|m| m.params[k].terms[j].tau2.unwrap_or(f64::NAN)),
                        mode_na: false,
                    });
                }
                TermBlock::Special(b) => {
                    for i in 1..=term.n_coef() {
                        smooth_rows.push(TableRow {
                            name: format!("{}.b{i}", b.label),
                            chain: samples.and_then(|s| {
                                chain_summary(s, &format!("{}.s.{}.b{i}", param.name, b.label))
                            }),
                            mode: mode.map(|m| m.params[k].terms[j].beta[i - 1]),
                            mode_na: false,
                        });
                    }
                }
            }
        }

        // the drawn error scale of the conjugate linear sampler
        if k == 0 {
            if let Some(row) = samples
                .filter(|s| s.colnames.iter().any(|c| c == "sigma"))
                .and_then(|s| chain_summary(s, "sigma"))
            {
                parametric_rows.push(TableRow {
                    name: "sigma".into(),
                    chain: Some(row),
                    mode: None,
                    mode_na: true,
                });
            }
        }

        // acceptance-rate row, shown only for sampled fits
        if let Some(alpha) = samples.and_then(|s| chain_summary(s, &format!("{}.alpha", param.name)))
        {
            let row = TableRow { name: "alpha".into(), chain: Some(alpha), mode: None, mode_na: true };
            if smooth_rows.is_empty() {
                parametric_rows.push(row);
            } else {
                smooth_rows.push(row);
            }
        }

        if !parametric_rows.is_empty() {
            text.push_str("Parametric coefficients:\n");
            text.push_str(&render_table(&parametric_rows, has_chain, has_mode));
        }
        if !smooth_rows.is_empty() {
            text.push_str("Smooth terms:\n");
            text.push_str(&render_table(&smooth_rows, has_chain, has_mode));
        }
    }
    text.push_str("---\n");

    if let Some(st) = stats {
        let loglik_mean = -(st.dic - st.pd) / 2.0;
        text.push_str("Sampler summary:\n-\n");
        text.push_str(&format!(
            "DIC = {} logLik = {} pd = {}\n",
            fmt_stat(st.dic),
            fmt_stat(loglik_mean),
            fmt_stat(st.pd)
        ));
        if let Some(rt) = sampler_runtime {
            text.push_str(&format!("runtime = {}\n", fmt_runtime(rt)));
        }
        text.push_str("---\n");
    }
    if let Some(m) = mode {
        text.push_str("Optimizer summary:\n-\n");
        text.push_str(&format!(
            "AICc = {} converged = {} edf = {}\n",
            fmt_stat(m.aicc),
            u8::from(m.converged),
            fmt_stat(m.edf)
        ));
        text.push_str(&format!(
            "logLik = {} logPost = {} nobs = {}\n",
            fmt_stat(m.loglik),
            fmt_stat(m.logpost),
            frame.n
        ));
        if let Some(rt) = optimizer_runtime {
            text.push_str(&format!("runtime = {}\n", fmt_runtime(rt)));
        }
        text.push_str("---\n");
    }
    text
}

// ---------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------

/// Applies the configuration's prediction requests (or a default
/// parameter-scale request) to a new table, reusing the run directory's
/// stored draws when present and refitting the mode otherwise. Returns
/// the written files.
pub fn predict_cmd(config_path: &Path, newdata_path: &Path) -> Result<Vec<PathBuf>> {
    let LoadedConfig { cfg, dir, .. } = load_config(config_path)?;
    let family = Family::by_name(&cfg.family)?;
    let fs = parse_formula_set(&cfg.formulas, &family)?;
    let table = DataTable::from_csv_path(&cfg.data)?;
    let frame = build_frame(&fs, &table, family)?;

    let samples_path = dir.join("samples.csv");
    let mut samples = None;
    let mut mode = None;
    if samples_path.exists() {
        let (colnames, data) = SampleMatrix::read_csv(&samples_path)?;
        let n_iter = data.nrows().max(1);
        samples = Some(SampleMatrix {
            colnames,
            data,
            n_iter,
            burnin: 1,
            thin: 1,
            seed: cfg.seed,
            block_rates: Vec::new(),
        });
    } else {
        let e = &cfg.engine;
        mode = match OptimizerChoice::parse(&cfg.optimizer)? {
            OptimizerChoice::Bfit => Some(backfit(
                &frame,
                e.maxit.unwrap_or(BACKFIT_MAX_ITER),
                e.eps.unwrap_or(BACKFIT_EPS),
            )?),
            OptimizerChoice::Boost => Some(boost(
                &frame,
                e.maxit.unwrap_or(BOOST_MAXIT),
                e.nu.unwrap_or(BOOST_NU),
            )?),
            OptimizerChoice::None => {
                return Err(Error::Config(format!(
                    "no draws at {} and no optimizer configured; run `fit` first",
                    samples_path.display()
                )))
            }
        };
    }
    let source = match (&samples, &mode) {
        (Some(s), _) => PredictSource::Samples(s),
        (None, Some(m)) => PredictSource::Mode(m),
        (None, None) => unreachable!(),
    };

    let stem = newdata_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "newdata".into());
    let mut requests: Vec<PredictionConfig> = cfg
        .prediction
        .iter()
        .filter(|r| r.target != "curve")
        .cloned()
        .collect();
    if requests.is_empty() {
        requests.push(PredictionConfig {
            name: "parameter".into(),
            newdata: None,
            target: "parameter".into(),
            functional: if samples.is_some() { "c95".into() } else { "mean".into() },
            terms: None,
            include_intercept: true,
            param: None,
            term: None,
            n_grid: None,
        });
    }

    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for req in &mut requests {
        req.newdata = Some(newdata_path.to_path_buf());
        req.name = format!("{}_{stem}", req.name);
        write_prediction(&dir, source, &frame, &table, req)?;
        written.push(dir.join(format!("prediction_{}.csv", req.name)));
    }
    Ok(written)
}

/// The stored text report of a finished run.
pub fn summary_text(run_dir: &Path) -> Result<String> {
    let path = run_dir.join("summary.txt");
    std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("no summary at {}: {e}", path.display())))
}

const USAGE: &str = "usage: distreg fit <config.toml>\n       \
                     distreg predict <config.toml> --newdata <table.csv>\n       \
                     distreg summary <run-dir>";

fn dispatch(args: &[String]) -> Result<String> {
    match args.first().map(String::as_str) {
        Some("fit") if args.len() == 2 => {
            let art = run(Path::new(&args[1]))?;
            Ok(format!("{}run directory: {}\n", art.summary, art.dir.display()))
        }
        Some("predict") if args.len() == 4 && args[2] == "--newdata" => {
            let files = predict_cmd(Path::new(&args[1]), Path::new(&args[3]))?;
            Ok(files.iter().map(|f| format!("{}\n", f.display())).collect())
        }
        Some("summary") if args.len() == 2 => summary_text(Path::new(&args[1])),
        _ => Err(Error::Config(USAGE.into())),
    }
}

/// Exit code of an error, by pipeline stage: 2 configuration/formula,
/// 3 data/design/family, 4 estimation/sampling/prediction/numeric,
/// 5 I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Formula(_) => 2,
        Error::Data(_) | Error::Design(_) | Error::Family(_) => 3,
        Error::Engine(_) | Error::Sampler(_) | Error::Predict(_) | Error::Numeric(_) => 4,
        Error::Io(_) => 5,
    }
}

/// Runs one subcommand, printing results to stdout and categorized
/// errors to stderr; returns the process exit code.
pub fn main_from_args(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            exit_code(&e)
        }
    }
}
