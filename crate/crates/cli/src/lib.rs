//! Command-line front end for the `cqdr` estimators: CSV ingestion, run
//! configuration and JSON reports.

pub mod config;
pub mod data;
pub mod report;

use std::io;
use std::path::{Path, PathBuf};

use cqdr::quantile::{build_multi_index_set, fit_local_quantile, LocalFitSpec};
use cqdr::{
    plan_bandwidths, qmave_fit, qopg_fit, rule_of_thumb_bandwidth, run_replicates, select_dimension_cv, sir_fit,
    BandwidthRule, CsEstimate, DimensionSelection, EstimatorKind, SimReport, SimSpec, SirConfig,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

pub use config::{ConfigError, RunConfig};
pub use data::{load_dataset_csv, ColumnRef, DataError, Dataset};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Estimation(#[from] cqdr::Error),

    #[error("cannot write output: {0}")]
    Output(#[from] io::Error),
}

impl CliError {
    /// 2 for usage and configuration, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Output(_) => 3,
            CliError::Estimation(e) => match e {
                cqdr::Error::Config(_) | cqdr::Error::InvalidInput(_) => 2,
                cqdr::Error::InsufficientData(_) | cqdr::Error::TooFewSlices { .. } => 3,
                _ => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub estimator: Option<String>,
    pub q: Option<usize>,
    pub bandwidth: Option<String>,
    pub tau_grid: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub response: Option<String>,
    pub features: Option<String>,
}

/// Defaults, then the config file, then the flags.
pub fn resolve_config(file: Option<&Path>, flags: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    let s = |x: &str| Value::String(x.to_string());
    if let Some(e) = &flags.estimator {
        cfg.set("estimator.kind", &s(e))?;
    }
    if let Some(q) = flags.q {
        cfg.q = Some(q);
    }
    if let Some(b) = &flags.bandwidth {
        cfg.set("estimator.qopg.bandwidth", &s(b))?;
        cfg.set("estimator.qmave.bandwidth", &s(b))?;
    }
    if let Some(t) = &flags.tau_grid {
        cfg.set("estimator.qopg.tau_grid", &s(t))?;
        cfg.set("estimator.qmave.tau_grid", &s(t))?;
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(t) = flags.threads {
        cfg.threads = Some(t);
    }
    if let Some(r) = &flags.response {
        cfg.response = Some(r.clone());
    }
    if let Some(f) = &flags.features {
        cfg.set("input.features", &s(f))?;
    }
    Ok(cfg)
}

pub fn load_input(cfg: &RunConfig, input: Option<&Path>) -> CliResult<Dataset> {
    let path = input.ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let response = cfg.response.as_deref().ok_or_else(|| CliError::Usage("--response is required".into()))?;
    let features: Option<Vec<ColumnRef>> = cfg.features.as_ref().map(|f| f.iter().map(|c| ColumnRef::parse(c)).collect());
    let data = load_dataset_csv(path, &ColumnRef::parse(response), features.as_deref())?;
    log::info!("loaded {} rows and {} covariates from {}", data.n(), data.p(), data.source);
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub source: String,
    pub response: String,
    pub columns: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub dropped_rows: usize,
}

impl From<&Dataset> for InputSummary {
    fn from(d: &Dataset) -> Self {
        Self {
            source: d.source.clone(),
            response: d.response_name.clone(),
            columns: d.column_names.clone(),
            n: d.n(),
            p: d.p(),
            dropped_rows: d.dropped_rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelValue {
    pub tau: f64,
    pub value: f64,
}

fn levels(pairs: &[(f64, f64)]) -> Vec<LevelValue> {
    pairs.iter().map(|&(tau, value)| LevelValue { tau, value }).collect()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub q: usize,
    /// `null` when the candidate could not be fitted.
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub command: &'static str,
    pub config: RunConfig,
    pub input: InputSummary,
    pub estimator: &'static str,
    pub q: usize,
    /// Present when `q` was chosen by cross-validation.
    pub dimension: Option<Vec<CvPoint>>,
    /// `p x q`, one row per covariate.
    pub basis: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub level_weights: Vec<LevelValue>,
    pub bandwidths: Vec<LevelValue>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

fn cv_curve(sel: &DimensionSelection) -> Vec<CvPoint> {
    sel.cv.iter().map(|&(q, cv)| CvPoint { q, cv }).collect()
}

pub fn estimate(cfg: &RunConfig, kind: EstimatorKind, x: &DMatrix<f64>, y: &[f64], q: usize) -> CliResult<CsEstimate> {
    let est = match kind {
        EstimatorKind::Qopg => qopg_fit(x, y, q, &cfg.qopg)?,
        EstimatorKind::Qmave => qmave_fit(x, y, q, &cfg.qmave)?,
        EstimatorKind::Sir => {
            let mut sir = SirConfig::for_sample_size(x.nrows(), q);
            if let Some(h) = cfg.sir_slices {
                sir.n_slices = h;
            }
            sir_fit(x, y, &sir)?
        }
    };
    Ok(est)
}

pub fn run_fit(cfg: &RunConfig, data: &Dataset) -> CliResult<FitReport> {
    let (q, dimension) = match cfg.q {
        Some(q) => (q, None),
        None => {
            let sel = select_dimension_cv(&data.x, &data.y, &cfg.candidates_for(data.p()), &cfg.dimension_cv())?;
            log::info!("cross-validation picked q = {}", sel.q_hat);
            (sel.q_hat, Some(cv_curve(&sel)))
        }
    };
    let est = estimate(cfg, cfg.estimator, &data.x, &data.y, q)?;
    Ok(FitReport {
        command: "fit",
        config: cfg.clone(),
        input: data.into(),
        estimator: cfg.estimator.name(),
        q,
        dimension,
        basis: rows_of(&est.basis),
        eigenvalues: est.eigenvalues.iter().copied().collect(),
        level_weights: levels(&est.level_weights),
        bandwidths: levels(&est.bandwidths),
        iterations: est.iterations,
        converged: est.converged,
        trace: est.trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimReport {
    pub command: &'static str,
    pub config: RunConfig,
    pub input: InputSummary,
    pub q_hat: usize,
    pub cv_curve: Vec<CvPoint>,
}

pub fn run_dim(cfg: &RunConfig, data: &Dataset) -> CliResult<DimReport> {
    let candidates = match cfg.q {
        Some(q) if cfg.dimension_candidates.is_empty() => (1..=q).collect(),
        _ => cfg.candidates_for(data.p()),
    };
    let sel = select_dimension_cv(&data.x, &data.y, &candidates, &cfg.dimension_cv())?;
    Ok(DimReport { command: "dim", config: cfg.clone(), input: data.into(), q_hat: sel.q_hat, cv_curve: cv_curve(&sel) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub command: &'static str,
    pub config: RunConfig,
    pub input: InputSummary,
    pub estimator: &'static str,
    pub rule: String,
    /// Mean-absolute-deviation CV bandwidth behind the modified rule.
    pub h_base: Option<f64>,
    pub per_level: Vec<LevelValue>,
    pub grid: Vec<f64>,
}

pub fn run_bandwidth(cfg: &RunConfig, data: &Dataset) -> CliResult<BandwidthReport> {
    let (rule, tau_grid, kernel, scale, solver, order) = match cfg.estimator {
        EstimatorKind::Qmave => (cfg.qmave.bandwidth, &cfg.qmave.tau_grid, cfg.qmave.kernel, cfg.qmave.bandwidth_scale, cfg.qmave.solver, 1),
        _ => (cfg.qopg.bandwidth, &cfg.qopg.tau_grid, cfg.qopg.kernel, cfg.qopg.bandwidth_scale, cfg.qopg.solver, cfg.qopg.order),
    };
    let set = build_multi_index_set(data.p(), order);
    let plan = plan_bandwidths(&data.x, &data.y, rule, tau_grid, &set, kernel, scale, &solver)?;
    Ok(BandwidthReport {
        command: "bandwidth",
        config: cfg.clone(),
        input: data.into(),
        estimator: cfg.estimator.name(),
        rule: config::bandwidth_name(plan.rule),
        h_base: plan.h_base,
        per_level: levels(&plan.per_level),
        grid: plan.grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub command: &'static str,
    pub config: RunConfig,
    pub spec: SimSpec,
    pub report: SimReport,
}

pub fn run_simulate(cfg: &RunConfig) -> CliResult<SimulateReport> {
    let spec = cfg.sim_spec();
    let report = run_replicates(&spec)?;
    if let Some(path) = &cfg.errors_csv {
        write_errors_csv(&report, path)?;
    }
    Ok(SimulateReport { command: "simulate", config: cfg.clone(), spec, report })
}

/// One row per estimator and replicate.
pub fn write_errors_csv(report: &SimReport, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output(e.into()))?;
    let out = |e: csv::Error| CliError::Output(e.into());
    w.write_record(["estimator", "replicate", "error", "wall_time"]).map_err(out)?;
    for est in &report.estimators {
        for (k, (&r, &err)) in est.replicates.iter().zip(&est.errors).enumerate() {
            let t = est.wall_times.get(k).copied().unwrap_or(f64::NAN);
            w.write_record([est.estimator.name().to_string(), r.to_string(), report::format_f64(err), t.to_string()])
                .map_err(out)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The part of a fit report needed to project new data.
#[derive(Debug, Clone, Deserialize)]
pub struct BasisSource {
    pub input: InputSummary,
    pub basis: Vec<Vec<f64>>,
}

impl BasisSource {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| DataError::FileNotFound(path.to_path_buf()))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not a fit report: {e}", path.display())))
    }

    pub fn matrix(&self) -> CliResult<DMatrix<f64>> {
        let p = self.basis.len();
        let q = self.basis.first().map_or(0, Vec::len);
        if p == 0 || q == 0 || self.basis.iter().any(|r| r.len() != q) {
            return Err(CliError::Usage("basis in fit report is empty or ragged".into()));
        }
        Ok(DMatrix::from_fn(p, q, |i, j| self.basis[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileCurve {
    pub tau: f64,
    /// Local linear fit of the response on the first reduced coordinate;
    /// `null` where the window is too thin.
    pub fitted: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectReport {
    pub command: &'static str,
    pub basis_source: String,
    pub input: InputSummary,
    pub coordinate_names: Vec<String>,
    pub response: Vec<f64>,
    /// `n x q`, one row per observation.
    pub coordinates: Vec<Vec<f64>>,
    /// Evaluation points for `quantile_curves`; empty unless `q = 1`.
    pub curve_grid: Vec<f64>,
    pub quantile_curves: Vec<QuantileCurve>,
}

const CURVE_POINTS: usize = 41;

fn quantile_curves(z: &[f64], y: &[f64], cfg: &RunConfig) -> (Vec<f64>, Vec<QuantileCurve>) {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let lo = sorted[n / 20];
    let hi = sorted[(n - 1) - n / 20];
    if !(hi > lo) {
        return (Vec::new(), Vec::new());
    }
    let grid: Vec<f64> = (0..CURVE_POINTS).map(|k| lo + (hi - lo) * k as f64 / (CURVE_POINTS - 1) as f64).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64).sqrt();
    let h = match cfg.qopg.bandwidth {
        BandwidthRule::Fixed(h) => h,
        _ => rule_of_thumb_bandwidth(n, 1, cfg.qopg.bandwidth_scale * sd),
    };
    let zm = DMatrix::from_column_slice(n, 1, z);
    let set = build_multi_index_set(1, 1);
    let curves = cfg
        .qopg
        .tau_grid
        .iter()
        .map(|&tau| {
            let spec = LocalFitSpec {
                tau,
                h_design: h,
                h_kernel: h,
                set: &set,
                kernel_directions: None,
                kernel: cfg.qopg.kernel,
                solver: cfg.qopg.solver,
            };
            let fitted = grid.iter().map(|&g| fit_local_quantile(&zm, y, &[g], &spec).ok().map(|f| f.coeffs[0])).collect();
            QuantileCurve { tau, fitted }
        })
        .collect();
    (grid, curves)
}

pub fn run_project(cfg: &RunConfig, input: Option<&Path>, basis_path: &Path) -> CliResult<ProjectReport> {
    let source = BasisSource::read(basis_path)?;
    let b = source.matrix()?;
    let mut cfg = cfg.clone();
    if cfg.response.is_none() {
        cfg.response = Some(source.input.response.clone());
    }
    if cfg.features.is_none() {
        cfg.features = Some(source.input.columns.clone());
    }
    let data = load_input(&cfg, input)?;
    if data.p() != b.nrows() {
        return Err(CliError::Usage(format!("basis has {} rows but the data have {} covariates", b.nrows(), data.p())));
    }
    let z = &data.x * &b;
    let (curve_grid, curves) = if b.ncols() == 1 {
        quantile_curves(z.column(0).as_slice(), &data.y, &cfg)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(ProjectReport {
        command: "project",
        basis_source: basis_path.display().to_string(),
        input: (&data).into(),
        coordinate_names: (1..=b.ncols()).map(|k| format!("z{k}")).collect(),
        response: data.y.clone(),
        coordinates: rows_of(&z),
        curve_grid,
        quantile_curves: curves,
    })
}

/// Reduced coordinates as CSV: the response, then `z1..zq`.
pub fn write_projection_csv<W: io::Write>(report: &ProjectReport, out: W) -> CliResult<()> {
    let err = |e: csv::Error| CliError::Output(e.into());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![report.input.response.clone()];
    header.extend(report.coordinate_names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (y, z) in report.response.iter().zip(&report.coordinates) {
        let mut rec = vec![y.to_string()];
        rec.extend(z.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `text` to `path`, or to stdout.
pub fn emit(text: &str, path: Option<&PathBuf>) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            use io::Write;
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}
