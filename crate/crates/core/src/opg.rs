//! Outer-product-of-gradients estimation of the central subspace.
//!
//! For each quantile level the local linear (or higher order) fits give a
//! gradient estimate at every sample point; their averaged outer products
//! form the level matrix. Level matrices are weighted by the share of their
//! eigenvalue mass carried by the first `q` eigenvalues and summed over the
//! level grid. The leading eigenvectors of that composite span the estimate.
//! Refinement rounds refit the gradients with a kernel measured along the
//! current directions until the subspace stops moving.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean_sd, symmetric_eigen, RowMajor};
use crate::quantile::{fit_rows, KernelSpec, LocalFitSpec, MultiIndexSet, SolverConfig};
use crate::selection::{plan_bandwidths, rule_of_thumb_bandwidth, BandwidthPlan, BandwidthRule};
use crate::sim::subspace_error;

/// Gradient estimates at every sample point for one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    pub tau: f64,
    /// Row `j` holds the gradient estimate at `X_j`.
    pub gradients: DMatrix<f64>,
    pub valid_mask: Vec<bool>,
}

impl GradientField {
    pub fn n_valid(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOpg {
    pub tau: f64,
    pub matrix: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub weight: f64,
}

impl LevelOpg {
    /// Zeroes the weight when the leading eigenvalue sits below `threshold`.
    pub fn apply_threshold(&mut self, threshold: f64) {
        if self.eigenvalues[0] < threshold {
            self.weight = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeOpg {
    pub matrix: DMatrix<f64>,
    pub tau_grid: Vec<f64>,
    pub delta_star: f64,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub weights_used: Vec<f64>,
}

/// Estimated central subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsEstimate {
    /// `p x q`, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub q: usize,
    /// All eigenvalues of the final composite matrix, descending.
    pub eigenvalues: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Subspace change between successive rounds (or objective values for qMAVE).
    pub trace: Vec<f64>,
    /// `(tau, weight)` of the final round.
    pub level_weights: Vec<(f64, f64)>,
    /// `(tau, kernel bandwidth)` of the final round.
    pub bandwidths: Vec<(f64, f64)>,
}

/// Averaged outer products of the valid gradients, with the adaptive weight.
pub fn level_opg(field: &GradientField, q: usize, weight_threshold: f64) -> Result<LevelOpg> {
    let p = field.gradients.ncols();
    if q == 0 || q > p {
        return Err(Error::InvalidInput(format!("dimension {q} outside 1..={p}")));
    }
    let n_valid = field.n_valid();
    if n_valid == 0 {
        return Err(Error::NoValidGradients { tau: field.tau });
    }
    let mut matrix = DMatrix::zeros(p, p);
    for (j, ok) in field.valid_mask.iter().enumerate() {
        if !ok {
            continue;
        }
        let g = field.gradients.row(j);
        for a in 0..p {
            for b in a..p {
                matrix[(a, b)] += g[a] * g[b];
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = matrix[(a, b)] / n_valid as f64;
            matrix[(a, b)] = v;
            matrix[(b, a)] = v;
        }
    }
    let eig = symmetric_eigen(&matrix)?;
    let lead: f64 = eig.values.iter().take(q).map(|v| v.max(0.0)).sum();
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let weight = if total > 0.0 { (lead / total).clamp(0.0, 1.0) } else { 0.0 };
    let mut level = LevelOpg { tau: field.tau, matrix, eigenvalues: eig.values, weight };
    level.apply_threshold(weight_threshold);
    Ok(level)
}

/// Weighted sum of level matrices over the grid, `sum_s w_s Sigma(tau_s)`,
/// with unit weights when `use_adaptive_weights` is false.
pub fn composite_opg(levels: &[LevelOpg], use_adaptive_weights: bool) -> Result<CompositeOpg> {
    let first = levels.first().ok_or_else(|| Error::InvalidInput("no quantile levels".into()))?;
    let p = first.matrix.nrows();
    let weights: Vec<f64> = levels.iter().map(|l| if use_adaptive_weights { l.weight } else { 1.0 }).collect();
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::AllWeightsZero);
    }
    let mut matrix = DMatrix::zeros(p, p);
    for (l, w) in levels.iter().zip(&weights) {
        if *w != 0.0 {
            matrix += &l.matrix * *w;
        }
    }
    let eig = symmetric_eigen(&matrix)?;
    let tau_grid: Vec<f64> = levels.iter().map(|l| l.tau).collect();
    let delta_star = tau_grid.iter().map(|t| t.min(1.0 - t)).fold(0.5, f64::min);
    Ok(CompositeOpg {
        matrix,
        tau_grid,
        delta_star,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        weights_used: weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QopgConfig {
    pub tau_grid: Vec<f64>,
    pub delta_star: f64,
    pub kernel: KernelSpec,
    /// Polynomial order `k` of the local fits.
    pub order: usize,
    pub bandwidth: BandwidthRule,
    /// Constant `c` in `c * sd * n^{-1/(d+4)}`.
    pub bandwidth_scale: f64,
    /// Total rounds including the first, full-dimensional one.
    pub max_rounds: usize,
    pub tol: f64,
    pub adaptive_weights: bool,
    /// Levels whose leading eigenvalue is below this fraction of the grid
    /// median leading eigenvalue get weight zero.
    pub weight_threshold_ratio: f64,
    /// Largest tolerated fraction of failed local fits before the bandwidth
    /// of a level is inflated.
    pub max_masked_fraction: f64,
    pub inflation_factor: f64,
    pub max_inflations: usize,
    pub solver: SolverConfig,
}

impl Default for QopgConfig {
    fn default() -> Self {
        Self {
            tau_grid: default_tau_grid(),
            delta_star: 0.1,
            kernel: KernelSpec::EPANECHNIKOV,
            order: 1,
            bandwidth: BandwidthRule::ModifiedCv,
            bandwidth_scale: 2.6,
            max_rounds: 20,
            tol: 1e-3,
            adaptive_weights: true,
            weight_threshold_ratio: 0.01,
            max_masked_fraction: 0.2,
            inflation_factor: 1.25,
            max_inflations: 3,
            solver: SolverConfig::default(),
        }
    }
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_tau_grid() -> Vec<f64> {
    (1..10).map(|s| s as f64 / 10.0).collect()
}

impl QopgConfig {
    pub fn validate(&self, n: usize, p: usize, q: usize) -> Result<MultiIndexSet> {
        if self.tau_grid.is_empty() {
            return Err(Error::Config("empty quantile grid".into()));
        }
        if !(self.delta_star > 0.0 && self.delta_star < 0.5) {
            return Err(Error::Config(format!("truncation constant {} outside (0, 0.5)", self.delta_star)));
        }
        let eps = 1e-12;
        if let Some(t) = self.tau_grid.iter().find(|&&t| t < self.delta_star - eps || t > 1.0 - self.delta_star + eps) {
            return Err(Error::Config(format!("quantile level {t} outside [{0}, 1 - {0}]", self.delta_star)));
        }
        if self.order == 0 {
            return Err(Error::OrderTooLow(0));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("at least one round is required".into()));
        }
        if q == 0 || q >= p {
            return Err(Error::InsufficientData(format!("structural dimension {q} must lie in 1..{p}")));
        }
        let set = MultiIndexSet::new(p, self.order);
        if n <= set.len() {
            return Err(Error::InsufficientData(format!("{n} samples for {} local coefficients", set.len())));
        }
        Ok(set)
    }
}

/// Shared state for gradient fitting on one data set.
pub(crate) struct GradientContext<'a> {
    pub rows: RowMajor,
    pub y: &'a [f64],
    pub set: MultiIndexSet,
    pub kernel: KernelSpec,
    pub solver: SolverConfig,
}

impl<'a> GradientContext<'a> {
    pub fn new(x: &DMatrix<f64>, y: &'a [f64], set: MultiIndexSet, kernel: KernelSpec, solver: SolverConfig) -> Self {
        Self { rows: RowMajor::from_matrix(x), y, set, kernel, solver }
    }

    /// Gradient estimates at every sample point.
    pub fn field(&self, tau: f64, h_design: f64, h_kernel: f64, directions: Option<&DMatrix<f64>>) -> GradientField {
        let n = self.rows.nrows();
        let p = self.rows.ncols();
        let spec = LocalFitSpec {
            tau,
            h_design,
            h_kernel,
            set: &self.set,
            kernel_directions: directions,
            kernel: self.kernel,
            solver: self.solver,
        };
        let projected = directions.map(|b| self.rows.project(b));
        let kernel_rows = projected.as_ref().unwrap_or(&self.rows);
        let range = self.set.first_order_positions();
        let fits: Vec<Option<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|j| {
                fit_rows(&self.rows, self.y, self.rows.row(j), kernel_rows, kernel_rows.row(j), &spec, None)
                    .ok()
                    .map(|f| f.coeffs[range.clone()].iter().map(|c| c / h_design).collect())
            })
            .collect();
        let mut gradients = DMatrix::zeros(n, p);
        let mut valid_mask = vec![false; n];
        for (j, g) in fits.into_iter().enumerate() {
            if let Some(g) = g {
                for (k, v) in g.into_iter().enumerate() {
                    gradients[(j, k)] = v;
                }
                valid_mask[j] = true;
            }
        }
        GradientField { tau, gradients, valid_mask }
    }

    /// Field with bandwidth inflation while too many fits fail. Returns the
    /// field and the kernel bandwidth finally used.
    pub fn robust_field(
        &self,
        tau: f64,
        h_design: f64,
        h_kernel: f64,
        directions: Option<&DMatrix<f64>>,
        cfg: &QopgConfig,
    ) -> (GradientField, f64, f64) {
        let n = self.rows.nrows() as f64;
        let (mut hd, mut hk) = (h_design, h_kernel);
        let mut field = self.field(tau, hd, hk, directions);
        for _ in 0..cfg.max_inflations {
            let masked = 1.0 - field.n_valid() as f64 / n;
            if masked <= cfg.max_masked_fraction {
                break;
            }
            hd *= cfg.inflation_factor;
            hk *= cfg.inflation_factor;
            field = self.field(tau, hd, hk, directions);
        }
        (field, hd, hk)
    }
}

struct Round {
    composite: CompositeOpg,
    levels: Vec<LevelOpg>,
    bandwidths: Vec<(f64, f64)>,
}

/// One estimation round: fields at every level, thresholded weights, composite.
fn run_round(
    ctx: &GradientContext<'_>,
    q: usize,
    cfg: &QopgConfig,
    bandwidths: &[(f64, f64, f64)],
    directions: Option<&DMatrix<f64>>,
    adaptive: bool,
) -> Result<Round> {
    let mut levels = Vec::with_capacity(bandwidths.len());
    let mut used = Vec::with_capacity(bandwidths.len());
    for &(tau, hd, hk) in bandwidths {
        let (field, _, hk_used) = ctx.robust_field(tau, hd, hk, directions, cfg);
        levels.push(level_opg(&field, q, 0.0)?);
        used.push((tau, hk_used));
    }
    let mut leading: Vec<f64> = levels.iter().map(|l| l.eigenvalues[0]).collect();
    leading.sort_by(f64::total_cmp);
    let m = leading.len();
    let median = if m % 2 == 1 { leading[m / 2] } else { 0.5 * (leading[m / 2 - 1] + leading[m / 2]) };
    let threshold = cfg.weight_threshold_ratio * median;
    for l in &mut levels {
        l.apply_threshold(threshold);
    }
    let composite = composite_opg(&levels, adaptive)?;
    Ok(Round { composite, levels, bandwidths: used })
}

/// Stage-one composite matrix with the full-dimensional kernel.
pub fn qopg_initial(x: &DMatrix<f64>, y: &[f64], q: usize, cfg: &QopgConfig, adaptive: bool) -> Result<CompositeOpg> {
    let set = cfg.validate(x.nrows(), x.ncols(), q)?;
    let plan = plan_bandwidths(x, y, cfg.bandwidth, &cfg.tau_grid, &set, cfg.kernel, cfg.bandwidth_scale, &cfg.solver)?;
    let ctx = GradientContext::new(x, y, set, cfg.kernel, cfg.solver);
    let bw = stage_one_bandwidths(&plan, &cfg.tau_grid);
    let mut round = run_round(&ctx, q, cfg, &bw, None, adaptive)?;
    round.composite.delta_star = cfg.delta_star;
    Ok(round.composite)
}

fn stage_one_bandwidths(plan: &BandwidthPlan, grid: &[f64]) -> Vec<(f64, f64, f64)> {
    grid.iter().map(|&t| (t, plan.h_for(t), plan.h_for(t))).collect()
}

/// Bandwidth for rounds that measure the kernel along `basis`.
pub fn refined_bandwidth(x: &DMatrix<f64>, basis: &DMatrix<f64>, scale: f64) -> f64 {
    let z = x * basis;
    rule_of_thumb_bandwidth(x.nrows(), basis.ncols(), scale * mean_sd(&z))
}

/// Adaptive composite quantile outer-product-of-gradients estimate of a
/// `q`-dimensional central subspace.
pub fn qopg_fit(x: &DMatrix<f64>, y: &[f64], q: usize, cfg: &QopgConfig) -> Result<CsEstimate> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput("X and Y have different numbers of rows".into()));
    }
    let set = cfg.validate(x.nrows(), x.ncols(), q)?;
    let plan = plan_bandwidths(x, y, cfg.bandwidth, &cfg.tau_grid, &set, cfg.kernel, cfg.bandwidth_scale, &cfg.solver)?;
    let ctx = GradientContext::new(x, y, set, cfg.kernel, cfg.solver);

    let first_bw = stage_one_bandwidths(&plan, &cfg.tau_grid);
    let mut round = run_round(&ctx, q, cfg, &first_bw, None, cfg.adaptive_weights)?;
    let mut basis = round.composite.eigenvectors.columns(0, q).into_owned();
    let mut trace = Vec::new();
    let mut converged = cfg.max_rounds == 1;
    let mut iterations = 1;

    while iterations < cfg.max_rounds {
        let bw: Vec<(f64, f64, f64)> = match cfg.bandwidth {
            BandwidthRule::Fixed(h) => cfg.tau_grid.iter().map(|&t| (t, plan.h_for(t), h)).collect(),
            _ => {
                let h = refined_bandwidth(x, &basis, cfg.bandwidth_scale);
                cfg.tau_grid.iter().map(|&t| (t, plan.h_for(t), h)).collect()
            }
        };
        round = run_round(&ctx, q, cfg, &bw, Some(&basis), cfg.adaptive_weights)?;
        iterations += 1;
        let next = round.composite.eigenvectors.columns(0, q).into_owned();
        let change = subspace_error(&next, &basis)?;
        trace.push(change);
        basis = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(CsEstimate {
        basis,
        q,
        eigenvalues: round.composite.eigenvalues.clone(),
        iterations,
        converged,
        trace,
        level_weights: round.levels.iter().map(|l| (l.tau, l.weight)).collect(),
        bandwidths: round.bandwidths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_from(tau: f64, rows: &[[f64; 2]]) -> GradientField {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        GradientField {
            tau,
            gradients: DMatrix::from_row_slice(rows.len(), 2, &flat),
            valid_mask: vec![true; rows.len()],
        }
    }

    #[test]
    fn constant_rank_one_field() {
        let l = level_opg(&field_from(0.5, &[[1.0, 0.0]; 5]), 1, 0.0).unwrap();
        assert_eq!(l.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!((l.eigenvalues[0] - 1.0).abs() < 1e-15 && l.eigenvalues[1].abs() < 1e-15);
        assert_eq!(l.weight, 1.0);
    }

    #[test]
    fn zero_field_has_zero_weight() {
        let l = level_opg(&field_from(0.3, &[[0.0, 0.0]; 4]), 1, 0.0).unwrap();
        assert_eq!(l.weight, 0.0);
        assert_eq!(l.matrix, DMatrix::zeros(2, 2));
    }

    #[test]
    fn weight_is_eigenvalue_share() {
        let field = GradientField {
            tau: 0.5,
            gradients: DMatrix::from_row_slice(2, 4, &[6f64.sqrt(), 0.0, 0.0, 0.0, 0.0, 2f64.sqrt(), 0.0, 0.0]),
            valid_mask: vec![true, true],
        };
        let l = level_opg(&field, 1, 0.0).unwrap();
        assert!((l.eigenvalues[0] - 3.0).abs() < 1e-12 && (l.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!((l.weight - 0.75).abs() < 1e-12);
        let t = level_opg(&field, 1, 3.5).unwrap();
        assert_eq!(t.weight, 0.0);
    }

    #[test]
    fn masked_rows_are_ignored() {
        let mut f = field_from(0.5, &[[1.0, 0.0], [100.0, 100.0]]);
        f.valid_mask[1] = false;
        let l = level_opg(&f, 1, 0.0).unwrap();
        assert_eq!(l.matrix[(0, 0)], 1.0);
        f.valid_mask[0] = false;
        assert_eq!(level_opg(&f, 1, 0.0).unwrap_err(), Error::NoValidGradients { tau: 0.5 });
    }

    #[test]
    fn composite_examples() {
        let m = level_opg(&field_from(0.2, &[[1.0, 2.0], [0.5, -1.0]]), 1, 0.0).unwrap();
        let single = composite_opg(std::slice::from_ref(&m), true).unwrap();
        assert_eq!(single.matrix, &m.matrix * m.weight);
        assert_eq!(composite_opg(std::slice::from_ref(&m), false).unwrap().matrix, m.matrix);
        let zero = level_opg(&field_from(0.8, &[[0.0, 0.0]; 2]), 1, 0.0).unwrap();
        let pair = composite_opg(&[m.clone(), zero.clone()], true).unwrap();
        assert_eq!(pair.matrix, &m.matrix * m.weight);
        assert_eq!(composite_opg(&[zero], true).unwrap_err(), Error::AllWeightsZero);
        assert!((pair.delta_star - 0.2).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let cfg = QopgConfig::default();
        assert!(cfg.validate(100, 4, 1).is_ok());
        assert!(matches!(cfg.validate(100, 4, 4), Err(Error::InsufficientData(_))));
        assert!(matches!(cfg.validate(5, 4, 1), Err(Error::InsufficientData(_))));
        let bad = QopgConfig { tau_grid: vec![0.05, 0.5], ..QopgConfig::default() };
        assert!(matches!(bad.validate(100, 4, 1), Err(Error::Config(_))));
        let k0 = QopgConfig { order: 0, ..QopgConfig::default() };
        assert_eq!(k0.validate(100, 4, 1).unwrap_err(), Error::OrderTooLow(0));
    }
}
