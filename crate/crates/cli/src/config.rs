//! Run configuration: flat dotted keys read from a TOML file, overridden by
//! command-line flags.

use std::path::{Path, PathBuf};

use cqdr::quantile::{KernelKind, KernelSpec, SolverConfig};
use cqdr::sim::DimensionSpec;
use cqdr::{BandwidthRule, CvSmoother, DimensionCvConfig, ErrorDist, EstimatorKind, ModelKind, QmaveConfig, QopgConfig, SimSpec};
use serde::Serialize;
use thiserror::Error;
use toml::Value;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("unknown config key {0}")]
    UnknownKey(String),

    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSettings {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub error: ErrorDist,
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
    pub dimension: bool,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            model: ModelKind::A,
            n: 200,
            p: 10,
            error: ErrorDist::Normal,
            replicates: 100,
            estimators: vec![EstimatorKind::Sir, EstimatorKind::Qopg, EstimatorKind::Qmave],
            dimension: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub estimator: EstimatorKind,
    /// Chosen by cross-validation over `dimension_candidates` when absent.
    pub q: Option<usize>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub response: Option<String>,
    pub features: Option<Vec<String>>,
    pub qopg: QopgConfig,
    pub qmave: QmaveConfig,
    /// Sample-size default when absent.
    pub sir_slices: Option<usize>,
    /// Empty means `1..=min(3, p)`.
    pub dimension_candidates: Vec<usize>,
    pub dimension_smoother: CvSmoother,
    pub dimension_bandwidth_scales: Vec<f64>,
    pub simulate: SimulateSettings,
    pub errors_csv: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let qopg = QopgConfig::default();
        Self {
            estimator: EstimatorKind::Qopg,
            q: None,
            seed: 20240101,
            threads: None,
            response: None,
            features: None,
            dimension_smoother: DimensionCvConfig::default().smoother,
            dimension_bandwidth_scales: DimensionCvConfig::default().bandwidth_scales,
            qopg,
            qmave: QmaveConfig::default(),
            sir_slices: None,
            dimension_candidates: Vec::new(),
            simulate: SimulateSettings::default(),
            errors_csv: None,
        }
    }
}

fn get_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        Value::String(s) => s.trim().parse().map_err(|_| bad(key, format!("expected a number, got {s:?}"))),
        _ => Err(bad(key, "expected a number")),
    }
}

fn get_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::String(s) => s.trim().parse().map_err(|_| bad(key, format!("expected a count, got {s:?}"))),
        _ => Err(bad(key, "expected a non-negative integer")),
    }
}

fn get_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    get_usize(key, v).map(|x| x as u64)
}

fn get_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    match v {
        Value::Boolean(b) => Ok(*b),
        Value::String(s) => s.trim().parse().map_err(|_| bad(key, format!("expected true or false, got {s:?}"))),
        _ => Err(bad(key, "expected a boolean")),
    }
}

fn get_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| bad(key, "expected a string"))
}

/// Arrays, or comma-separated strings as given on the command line.
fn get_list(key: &str, v: &Value) -> Result<Vec<Value>, ConfigError> {
    match v {
        Value::Array(items) => Ok(items.clone()),
        Value::String(s) => Ok(s.split(',').map(|t| t.trim()).filter(|t| !t.is_empty()).map(|t| Value::String(t.into())).collect()),
        _ => Err(bad(key, "expected a list")),
    }
}

fn get_f64_list(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    get_list(key, v)?.iter().map(|x| get_f64(key, x)).collect()
}

fn get_usize_list(key: &str, v: &Value) -> Result<Vec<usize>, ConfigError> {
    get_list(key, v)?.iter().map(|x| get_usize(key, x)).collect()
}

pub fn parse_estimator(s: &str) -> Option<EstimatorKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "qopg" => Some(EstimatorKind::Qopg),
        "qmave" => Some(EstimatorKind::Qmave),
        "sir" => Some(EstimatorKind::Sir),
        _ => None,
    }
}

/// `rot`, `cv`, `modified-cv` or `fixed:<h>`.
pub fn parse_bandwidth(s: &str) -> Option<BandwidthRule> {
    let s = s.trim().to_ascii_lowercase();
    match s.as_str() {
        "rot" | "rule-of-thumb" => Some(BandwidthRule::RuleOfThumb),
        "cv" => Some(BandwidthRule::CvPerLevel),
        "modified-cv" | "mcv" => Some(BandwidthRule::ModifiedCv),
        _ => s.strip_prefix("fixed:").and_then(|h| h.trim().parse().ok()).filter(|h: &f64| *h > 0.0).map(BandwidthRule::Fixed),
    }
}

pub fn bandwidth_name(rule: BandwidthRule) -> String {
    match rule {
        BandwidthRule::RuleOfThumb => "rot".into(),
        BandwidthRule::CvPerLevel => "cv".into(),
        BandwidthRule::ModifiedCv => "modified-cv".into(),
        BandwidthRule::Fixed(h) => format!("fixed:{h}"),
    }
}

fn parse_kernel(key: &str, s: &str) -> Result<KernelSpec, ConfigError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "epanechnikov" => Ok(KernelSpec::EPANECHNIKOV),
        "uniform" => Ok(KernelSpec::UNIFORM),
        other => Err(bad(key, format!("unknown kernel {other:?}"))),
    }
}

fn parse_smoother(key: &str, s: &str) -> Result<CvSmoother, ConfigError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "local-linear" => Ok(CvSmoother::LocalLinear),
        "local-constant" => Ok(CvSmoother::LocalConstant),
        other => Err(bad(key, format!("unknown smoother {other:?}"))),
    }
}

fn smoother_name(s: CvSmoother) -> &'static str {
    match s {
        CvSmoother::LocalLinear => "local-linear",
        CvSmoother::LocalConstant => "local-constant",
    }
}

fn kernel_name(k: KernelSpec) -> &'static str {
    match k.kind {
        KernelKind::Epanechnikov => "epanechnikov",
        KernelKind::Uniform => "uniform",
    }
}

fn parse_model(key: &str, s: &str) -> Result<ModelKind, ConfigError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "a" => Ok(ModelKind::A),
        "b" => Ok(ModelKind::B),
        "c" => Ok(ModelKind::C),
        "linear_heteroscedastic" | "linear-heteroscedastic" => {
            Ok(ModelKind::LinearHeteroscedastic { beta1: None, beta2: None })
        }
        other => Err(bad(key, format!("unknown model {other:?}"))),
    }
}

fn model_name(m: &ModelKind) -> &'static str {
    match m {
        ModelKind::A => "A",
        ModelKind::B => "B",
        ModelKind::C => "C",
        ModelKind::LinearHeteroscedastic { .. } => "linear_heteroscedastic",
        ModelKind::Custom(_) => "custom",
    }
}

fn parse_error_dist(key: &str, s: &str) -> Result<ErrorDist, ConfigError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "normal" => Ok(ErrorDist::Normal),
        "t3" | "t3_scaled" => Ok(ErrorDist::T3Scaled),
        "chisq1" => Ok(ErrorDist::Chisq1),
        other => Err(bad(key, format!("unknown error distribution {other:?}"))),
    }
}

fn error_dist_name(d: ErrorDist) -> &'static str {
    match d {
        ErrorDist::Normal => "normal",
        ErrorDist::T3Scaled => "t3",
        ErrorDist::Chisq1 => "chisq1",
    }
}

fn set_solver(s: &mut SolverConfig, key: &str, field: &str, v: &Value) -> Result<(), ConfigError> {
    match field {
        "eps_start" => s.eps_start = get_f64(key, v)?,
        "eps_min" => s.eps_min = get_f64(key, v)?,
        "tol" => s.tol = get_f64(key, v)?,
        "max_iter" => s.max_iter = get_usize(key, v)?,
        "ridge" => s.ridge = get_f64(key, v)?,
        "polish_every" => s.polish_every = get_usize(key, v)?,
        "max_pivots" => s.max_pivots = get_usize(key, v)?,
        _ => return Err(ConfigError::UnknownKey(key.to_string())),
    }
    Ok(())
}

fn solver_entries(prefix: &str, s: &SolverConfig, doc: &str) -> Vec<ConfigEntry> {
    let f = |k: &str, v: String, d: &str| ConfigEntry { key: format!("{prefix}.{k}"), value: v, doc: format!("{doc}: {d}") };
    vec![
        f("eps_start", toml_f64(s.eps_start), "initial smoothing relative to the response IQR"),
        f("eps_min", toml_f64(s.eps_min), "smoothing floor"),
        f("tol", toml_f64(s.tol), "relative objective change ending an inner loop"),
        f("max_iter", s.max_iter.to_string(), "majorize-minimize steps across all smoothing levels"),
        f("ridge", toml_f64(s.ridge), "ridge added to singular steps, relative to the mean diagonal"),
        f("polish_every", s.polish_every.to_string(), "steps between vertex polishing attempts (0: level ends only)"),
        f("max_pivots", s.max_pivots.to_string(), "vertex exchanges per polishing attempt"),
    ]
}

fn rule(key: &str, v: &Value) -> Result<BandwidthRule, ConfigError> {
    let s = get_str(key, v)?;
    parse_bandwidth(s).ok_or_else(|| bad(key, format!("expected rot, cv, modified-cv or fixed:<h>, got {s:?}")))
}

/// One documented key with its default, as written by `cqdr config`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    /// TOML literal.
    pub value: String,
    pub doc: String,
}

fn toml_f64(x: f64) -> String {
    Value::Float(x).to_string()
}

fn toml_list<T: ToString>(xs: &[T]) -> String {
    format!("[{}]", xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

fn toml_str(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

impl RunConfig {
    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        if let Some(rest) = key.strip_prefix("estimator.qopg.solver.") {
            return set_solver(&mut self.qopg.solver, key, rest, v);
        }
        if let Some(rest) = key.strip_prefix("estimator.qmave.solver.") {
            return set_solver(&mut self.qmave.solver, key, rest, v);
        }
        if let Some(rest) = key.strip_prefix("estimator.qmave.direction_solver.") {
            return set_solver(&mut self.qmave.direction_solver, key, rest, v);
        }
        match key {
            "estimator.kind" => {
                let s = get_str(key, v)?;
                self.estimator = parse_estimator(s).ok_or_else(|| bad(key, format!("unknown estimator {s:?}")))?;
            }
            "q" => self.q = Some(get_usize(key, v)?),
            "seed" => self.seed = get_u64(key, v)?,
            "threads" => self.threads = Some(get_usize(key, v)?),
            "input.response" => self.response = Some(get_str(key, v)?.to_string()),
            "input.features" => {
                self.features = Some(get_list(key, v)?.iter().map(|x| get_str(key, x).map(str::to_string)).collect::<Result<_, _>>()?)
            }

            "estimator.qopg.tau_grid" => self.qopg.tau_grid = get_f64_list(key, v)?,
            "estimator.qopg.delta_star" => self.qopg.delta_star = get_f64(key, v)?,
            "estimator.qopg.kernel" => self.qopg.kernel = parse_kernel(key, get_str(key, v)?)?,
            "estimator.qopg.order" => self.qopg.order = get_usize(key, v)?,
            "estimator.qopg.bandwidth" => self.qopg.bandwidth = rule(key, v)?,
            "estimator.qopg.bandwidth_scale" => self.qopg.bandwidth_scale = get_f64(key, v)?,
            "estimator.qopg.max_rounds" => self.qopg.max_rounds = get_usize(key, v)?,
            "estimator.qopg.tol" => self.qopg.tol = get_f64(key, v)?,
            "estimator.qopg.adaptive_weights" => self.qopg.adaptive_weights = get_bool(key, v)?,
            "estimator.qopg.weight_threshold_ratio" => self.qopg.weight_threshold_ratio = get_f64(key, v)?,
            "estimator.qopg.max_masked_fraction" => self.qopg.max_masked_fraction = get_f64(key, v)?,
            "estimator.qopg.inflation_factor" => self.qopg.inflation_factor = get_f64(key, v)?,
            "estimator.qopg.max_inflations" => self.qopg.max_inflations = get_usize(key, v)?,

            "estimator.qmave.tau_grid" => self.qmave.tau_grid = get_f64_list(key, v)?,
            "estimator.qmave.delta_star" => self.qmave.delta_star = get_f64(key, v)?,
            "estimator.qmave.kernel" => self.qmave.kernel = parse_kernel(key, get_str(key, v)?)?,
            "estimator.qmave.bandwidth" => self.qmave.bandwidth = rule(key, v)?,
            "estimator.qmave.bandwidth_scale" => self.qmave.bandwidth_scale = get_f64(key, v)?,
            "estimator.qmave.projected_kernel" => self.qmave.projected_kernel = get_bool(key, v)?,
            "estimator.qmave.max_rounds" => self.qmave.max_rounds = get_usize(key, v)?,
            "estimator.qmave.tol" => self.qmave.tol = get_f64(key, v)?,

            "estimator.sir.n_slices" => self.sir_slices = Some(get_usize(key, v)?),

            "dimension.candidates" => self.dimension_candidates = get_usize_list(key, v)?,
            "dimension.smoother" => self.dimension_smoother = parse_smoother(key, get_str(key, v)?)?,
            "dimension.bandwidth_scales" => self.dimension_bandwidth_scales = get_f64_list(key, v)?,

            "simulate.model" => self.simulate.model = parse_model(key, get_str(key, v)?)?,
            "simulate.beta1" | "simulate.beta2" => {
                let beta = Some(get_f64_list(key, v)?);
                match &mut self.simulate.model {
                    ModelKind::LinearHeteroscedastic { beta1, beta2 } => {
                        if key.ends_with('1') {
                            *beta1 = beta;
                        } else {
                            *beta2 = beta;
                        }
                    }
                    _ => return Err(bad(key, "only used with simulate.model = \"linear_heteroscedastic\" (set the model first)")),
                }
            }
            "simulate.n" => self.simulate.n = get_usize(key, v)?,
            "simulate.p" => self.simulate.p = get_usize(key, v)?,
            "simulate.error" => self.simulate.error = parse_error_dist(key, get_str(key, v)?)?,
            "simulate.replicates" => self.simulate.replicates = get_usize(key, v)?,
            "simulate.estimators" => {
                self.simulate.estimators = get_list(key, v)?
                    .iter()
                    .map(|x| {
                        let s = get_str(key, x)?;
                        parse_estimator(s).ok_or_else(|| bad(key, format!("unknown estimator {s:?}")))
                    })
                    .collect::<Result<_, _>>()?
            }
            "simulate.dimension" => self.simulate.dimension = get_bool(key, v)?,

            "output.errors_csv" => self.errors_csv = Some(PathBuf::from(get_str(key, v)?)),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a TOML document. Nested tables and quoted dotted keys are
    /// equivalent. `simulate.model` is applied first so the betas can follow
    /// it in any order.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: toml::Table = text.parse()?;
        let mut flat = Vec::new();
        flatten("", &Value::Table(table), &mut flat);
        flat.sort_by_key(|(k, _)| k != "simulate.model");
        for (k, v) in &flat {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        self.apply_toml(&text)
    }

    pub fn dimension_cv(&self) -> DimensionCvConfig {
        DimensionCvConfig {
            qopg: self.qopg.clone(),
            smoother: self.dimension_smoother,
            bandwidth_scales: self.dimension_bandwidth_scales.clone(),
        }
    }

    pub fn candidates_for(&self, p: usize) -> Vec<usize> {
        if self.dimension_candidates.is_empty() {
            (1..=p.min(3)).collect()
        } else {
            self.dimension_candidates.clone()
        }
    }

    pub fn sim_spec(&self) -> SimSpec {
        let s = &self.simulate;
        let mut spec = SimSpec::new(s.model.clone(), s.n, s.error, s.replicates, self.seed);
        spec.p = s.p;
        spec.estimators = s.estimators.clone();
        spec.qopg = self.qopg.clone();
        spec.qmave = self.qmave.clone();
        spec.sir_slices = self.sir_slices;
        if s.dimension {
            spec.dimension = Some(DimensionSpec { candidates: self.candidates_for(s.p), cv: self.dimension_cv() });
        }
        spec
    }

    /// Every key with its current value. Optional knobs without a value are
    /// listed commented out by `render_entries`.
    pub fn entries(&self) -> Vec<ConfigEntry> {
        let e = |k: &str, v: String, d: &str| ConfigEntry { key: k.to_string(), value: v, doc: d.to_string() };
        let qo = &self.qopg;
        let qm = &self.qmave;
        let s = &self.simulate;
        let mut out = vec![
            e("estimator.kind", toml_str(self.estimator.name()), "estimator for fit: qopg, qmave or sir"),
            e("q", self.q.map_or(String::new(), |q| q.to_string()), "structural dimension; cross-validated when unset"),
            e("seed", self.seed.to_string(), "simulation seed"),
            e("threads", self.threads.map_or(String::new(), |t| t.to_string()), "worker threads; all cores when unset"),
            e("input.response", self.response.as_deref().map_or(String::new(), toml_str), "response column name or index"),
            e(
                "input.features",
                self.features.as_ref().map_or(String::new(), |f| format!("[{}]", f.iter().map(|c| toml_str(c)).collect::<Vec<_>>().join(", "))),
                "covariate columns; every other numeric column when unset",
            ),
            e("estimator.qopg.tau_grid", toml_list(&qo.tau_grid.iter().map(|&t| toml_f64(t)).collect::<Vec<_>>()), "quantile levels"),
            e("estimator.qopg.delta_star", toml_f64(qo.delta_star), "eigenvalue share defining the level weights"),
            e("estimator.qopg.kernel", toml_str(kernel_name(qo.kernel)), "epanechnikov or uniform"),
            e("estimator.qopg.order", qo.order.to_string(), "local polynomial order"),
            e("estimator.qopg.bandwidth", toml_str(&bandwidth_name(qo.bandwidth)), "rot, cv, modified-cv or fixed:<h>"),
            e("estimator.qopg.bandwidth_scale", toml_f64(qo.bandwidth_scale), "rule-of-thumb scale constant"),
            e("estimator.qopg.max_rounds", qo.max_rounds.to_string(), "refinement rounds"),
            e("estimator.qopg.tol", toml_f64(qo.tol), "subspace change ending the refinement"),
            e("estimator.qopg.adaptive_weights", qo.adaptive_weights.to_string(), "weight levels by their eigenvalue share"),
            e("estimator.qopg.weight_threshold_ratio", toml_f64(qo.weight_threshold_ratio), "levels whose leading eigenvalue falls below this share of the grid median get weight zero"),
            e("estimator.qopg.max_masked_fraction", toml_f64(qo.max_masked_fraction), "masked fraction triggering bandwidth inflation"),
            e("estimator.qopg.inflation_factor", toml_f64(qo.inflation_factor), "bandwidth inflation factor"),
            e("estimator.qopg.max_inflations", qo.max_inflations.to_string(), "bandwidth inflations per level"),
        ];
        out.extend(solver_entries("estimator.qopg.solver", &qo.solver, "qOPG local fits"));
        out.extend([
            e("estimator.qmave.tau_grid", toml_list(&qm.tau_grid.iter().map(|&t| toml_f64(t)).collect::<Vec<_>>()), "quantile levels"),
            e("estimator.qmave.delta_star", toml_f64(qm.delta_star), "eigenvalue share used by the initializer"),
            e("estimator.qmave.kernel", toml_str(kernel_name(qm.kernel)), "epanechnikov or uniform"),
            e("estimator.qmave.bandwidth", toml_str(&bandwidth_name(qm.bandwidth)), "rot, cv, modified-cv or fixed:<h>"),
            e("estimator.qmave.bandwidth_scale", toml_f64(qm.bandwidth_scale), "rule-of-thumb scale constant"),
            e("estimator.qmave.projected_kernel", qm.projected_kernel.to_string(), "kernel distances along the current directions"),
            e("estimator.qmave.max_rounds", qm.max_rounds.to_string(), "alternation rounds"),
            e("estimator.qmave.tol", toml_f64(qm.tol), "relative objective change ending the alternation"),
        ]);
        out.extend(solver_entries("estimator.qmave.solver", &qm.solver, "qMAVE local planes"));
        out.extend(solver_entries("estimator.qmave.direction_solver", &qm.direction_solver, "qMAVE direction step"));
        out.extend([
            e("estimator.sir.n_slices", self.sir_slices.map_or(String::new(), |h| h.to_string()), "SIR slices; 8 up to n = 300, else 10"),
            e("dimension.candidates", toml_list(&self.dimension_candidates), "candidate dimensions; empty means 1..=min(3, p)"),
            e("dimension.smoother", toml_str(smoother_name(self.dimension_smoother)), "local-linear or local-constant"),
            e(
                "dimension.bandwidth_scales",
                toml_list(&self.dimension_bandwidth_scales),
                "scales of the projected bandwidth tried in CV(q); the best one counts",
            ),
            e("simulate.model", toml_str(model_name(&s.model)), "A, B, C or linear_heteroscedastic"),
        ]);
        if let ModelKind::LinearHeteroscedastic { beta1, beta2 } = &s.model {
            let list = |b: &Option<Vec<f64>>| b.as_ref().map_or(String::new(), |b| toml_list(&b.iter().map(|&x| toml_f64(x)).collect::<Vec<_>>()));
            out.push(e("simulate.beta1", list(beta1), "mean direction; e1 when unset"));
            out.push(e("simulate.beta2", list(beta2), "scale direction; e2 when unset"));
        }
        out.extend([
            e("simulate.n", s.n.to_string(), "sample size"),
            e("simulate.p", s.p.to_string(), "covariate dimension"),
            e("simulate.error", toml_str(error_dist_name(s.error)), "normal, t3 or chisq1"),
            e("simulate.replicates", s.replicates.to_string(), "replicates"),
            e("simulate.estimators", toml_list(&s.estimators.iter().map(|k| toml_str(k.name())).collect::<Vec<_>>()), "estimators to run"),
            e("simulate.dimension", s.dimension.to_string(), "also select the dimension in each replicate"),
            e("output.errors_csv", self.errors_csv.as_ref().map_or(String::new(), |p| toml_str(&p.display().to_string())), "per-replicate errors as CSV"),
        ]);
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Table(t) => {
            for (k, item) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, item, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// A commented TOML document of `entries`, with quoted dotted keys.
pub fn render_entries(entries: &[ConfigEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("# {}\n", e.doc));
        if e.value.is_empty() {
            out.push_str(&format!("# \"{}\" =\n", e.key));
        } else {
            out.push_str(&format!("\"{}\" = {}\n", e.key, e.value));
        }
    }
    out
}
