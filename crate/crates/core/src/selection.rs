//! Bandwidth selection and structural-dimension selection.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::{mean_sd, RowMajor};
use crate::opg::{qopg_fit, QopgConfig};
use crate::quantile::{
    check_loss, fit_rows, kernel_weight, solve_spd, sup_distance, weighted_quantile, KernelSpec, LocalFitSpec,
    MultiIndexSet, SolverConfig,
};

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of the standard normal distribution function: Acklam's rational
/// approximation followed by one Newton step. Exactly antisymmetric about 0.5.
pub fn normal_inv_cdf(tau: f64) -> f64 {
    assert!(tau > 0.0 && tau < 1.0, "quantile level {tau} outside (0, 1)");
    if tau == 0.5 {
        0.0
    } else if tau > 0.5 {
        -lower_inv_cdf(1.0 - tau)
    } else {
        lower_inv_cdf(tau)
    }
}

fn lower_inv_cdf(t: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let x = if t < 0.02425 {
        let q = (-2.0 * t.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = t - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    x - (normal_cdf(x) - t) / normal_pdf(x)
}

/// `{tau (1 - tau) / phi(Phi^{-1}(tau))}^{1/5}`.
pub fn modified_cv_factor(tau: f64) -> f64 {
    (tau * (1.0 - tau) / normal_pdf(normal_inv_cdf(tau))).powf(0.2)
}

/// Level-specific bandwidths `h_base * modified_cv_factor(tau)`.
pub fn modified_cv_bandwidths(h_base: f64, tau_grid: &[f64]) -> Vec<(f64, f64)> {
    tau_grid.iter().map(|&t| (t, h_base * modified_cv_factor(t))).collect()
}

/// `scale * n^{-1/(d+4)}`; `scale` already carries the data spread.
pub fn rule_of_thumb_bandwidth(n: usize, d: usize, scale: f64) -> f64 {
    scale * (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// Ten log-spaced candidates from `0.3 h` to `3 h`.
pub fn default_h_grid(h_rot: f64) -> Vec<f64> {
    let (lo, hi) = ((0.3 * h_rot).ln(), (3.0 * h_rot).ln());
    (0..10).map(|i| (lo + (hi - lo) * i as f64 / 9.0).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "h")]
pub enum BandwidthRule {
    Fixed(f64),
    RuleOfThumb,
    CvPerLevel,
    ModifiedCv,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::ModifiedCv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub rule: BandwidthRule,
    /// Mean-absolute-deviation CV bandwidth feeding the modified rule.
    pub h_base: Option<f64>,
    pub per_level: Vec<(f64, f64)>,
    pub grid: Vec<f64>,
}

impl BandwidthPlan {
    pub fn h_for(&self, tau: f64) -> f64 {
        self.per_level
            .iter()
            .min_by(|a, b| (a.0 - tau).abs().total_cmp(&(b.0 - tau).abs()))
            .map(|l| l.1)
            .expect("bandwidth plan has no levels")
    }
}

/// Full-dimensional bandwidths for every level of `tau_grid`.
#[allow(clippy::too_many_arguments)]
pub fn plan_bandwidths(
    x: &DMatrix<f64>,
    y: &[f64],
    rule: BandwidthRule,
    tau_grid: &[f64],
    set: &MultiIndexSet,
    kernel: KernelSpec,
    scale: f64,
    solver: &SolverConfig,
) -> Result<BandwidthPlan> {
    let (n, p) = x.shape();
    let h_rot = rule_of_thumb_bandwidth(n, p, scale * mean_sd(x));
    let grid = default_h_grid(h_rot);
    let plan = match rule {
        BandwidthRule::Fixed(h) => {
            if !(h > 0.0) {
                return Err(Error::Config(format!("fixed bandwidth must be positive, got {h}")));
            }
            BandwidthPlan { rule, h_base: None, per_level: tau_grid.iter().map(|&t| (t, h)).collect(), grid: vec![h] }
        }
        BandwidthRule::RuleOfThumb => {
            BandwidthPlan { rule, h_base: None, per_level: tau_grid.iter().map(|&t| (t, h_rot)).collect(), grid: vec![h_rot] }
        }
        BandwidthRule::CvPerLevel => {
            let per_level = tau_grid
                .iter()
                .map(|&t| cv_bandwidth_quantile(x, y, t, &grid, set, kernel, solver).map(|h| (t, h)))
                .collect::<Result<Vec<_>>>()?;
            BandwidthPlan { rule, h_base: None, per_level, grid }
        }
        BandwidthRule::ModifiedCv => {
            let h_base = mean_abs_dev_cv_bandwidth(x, y, &grid, kernel)?;
            BandwidthPlan { rule, h_base: Some(h_base), per_level: modified_cv_bandwidths(h_base, tau_grid), grid }
        }
    };
    Ok(plan)
}

fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// Leave-one-out check-loss CV for a local polynomial quantile fit at level
/// `tau`. Points whose window is too thin contribute the loss of the global
/// sample quantile.
pub fn cv_bandwidth_quantile(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    h_grid: &[f64],
    set: &MultiIndexSet,
    kernel: KernelSpec,
    solver: &SolverConfig,
) -> Result<f64> {
    if h_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if h_grid.len() == 1 {
        return Ok(h_grid[0]);
    }
    let rows = RowMajor::from_matrix(x);
    let fallback = weighted_quantile(y, &vec![1.0; y.len()], tau).ok_or(Error::InsufficientData("empty sample".into()))?;
    let scores: Vec<f64> = h_grid
        .iter()
        .map(|&h| {
            let spec = LocalFitSpec {
                tau,
                h_design: h,
                h_kernel: h,
                set,
                kernel_directions: None,
                kernel,
                solver: *solver,
            };
            let losses: Vec<f64> = (0..y.len())
                .into_par_iter()
                .map(|j| {
                    let pred = fit_rows(&rows, y, rows.row(j), &rows, rows.row(j), &spec, Some(j))
                        .map(|f| f.coeffs[0])
                        .unwrap_or(fallback);
                    check_loss(y[j] - pred, tau)
                })
                .collect();
            losses.iter().sum::<f64>() / y.len() as f64
        })
        .collect();
    Ok(h_grid[argmin_first(&scores)])
}

/// Leave-one-out least-squares CV of a local linear mean regression of
/// `|Y - mean(Y)|` on `X`.
pub fn mean_abs_dev_cv_bandwidth(x: &DMatrix<f64>, y: &[f64], h_grid: &[f64], kernel: KernelSpec) -> Result<f64> {
    if h_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if h_grid.len() == 1 {
        return Ok(h_grid[0]);
    }
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = y.iter().map(|v| (v - mean).abs()).collect();
    let z_sum: f64 = z.iter().sum();
    let rows = RowMajor::from_matrix(x);
    let p = rows.ncols();
    let s = p + 1;
    let scores: Vec<f64> = h_grid
        .iter()
        .map(|&h| {
            let losses: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|j| {
                    let loo_mean = if n > 1 { (z_sum - z[j]) / (n - 1) as f64 } else { z[j] };
                    let mut gram = vec![0.0; s * s];
                    let mut rhs = vec![0.0; s];
                    let mut count = 0;
                    let mut row = vec![1.0; s];
                    for i in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = kernel_weight(sup_distance(rows.row(i), rows.row(j)), h, kernel);
                        if w <= 0.0 {
                            continue;
                        }
                        count += 1;
                        for (k, (a, b)) in rows.row(i).iter().zip(rows.row(j)).enumerate() {
                            row[k + 1] = (a - b) / h;
                        }
                        for a in 0..s {
                            for b in a..s {
                                gram[a * s + b] += w * row[a] * row[b];
                            }
                            rhs[a] += w * row[a] * z[i];
                        }
                    }
                    let pred = if count >= s {
                        solve_spd(gram, rhs, s, 1e-8).map(|c| c[0]).unwrap_or(loo_mean)
                    } else {
                        loo_mean
                    };
                    (z[j] - pred).powi(2)
                })
                .collect();
            losses.iter().sum::<f64>() / n as f64
        })
        .collect();
    Ok(h_grid[argmin_first(&scores)])
}

/// Smoother inside `CV(q)`. Local linear fits leave every `q` at the noise
/// level on nearly linear data, so the selection turns into a coin flip there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvSmoother {
    LocalConstant,
    LocalLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionCvConfig {
    /// Estimator settings used to fit each candidate basis.
    pub qopg: QopgConfig,
    pub smoother: CvSmoother,
    /// Multiples of `n^{-1/(q+4)} sd(B_q' X)` tried for each candidate.
    /// `CV(q)` is the smallest score over them.
    pub bandwidth_scales: Vec<f64>,
}

impl Default for DimensionCvConfig {
    fn default() -> Self {
        let qopg = QopgConfig::default();
        Self { bandwidth_scales: vec![qopg.bandwidth_scale], qopg, smoother: CvSmoother::LocalConstant }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSelection {
    pub q_hat: usize,
    /// `(q, CV(q))`; failed candidates carry `+inf`.
    pub cv: Vec<(usize, f64)>,
}

/// Picks the structural dimension minimizing the leave-one-out composite
/// check loss of local quantile fits on `B_q' X`, each candidate at its own
/// best bandwidth. Ties go to the smaller `q`.
pub fn select_dimension_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    q_candidates: &[usize],
    cfg: &DimensionCvConfig,
) -> Result<DimensionSelection> {
    if q_candidates.is_empty() {
        return Err(Error::Config("no candidate dimensions".into()));
    }
    if cfg.bandwidth_scales.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let p = x.ncols();
    let mut cv = Vec::with_capacity(q_candidates.len());
    for &q in q_candidates {
        if q == 0 || q > p {
            return Err(Error::Config(format!("candidate dimension {q} outside 1..={p}")));
        }
        let basis = if q == p {
            Ok(DMatrix::identity(p, p))
        } else {
            qopg_fit(x, y, q, &cfg.qopg).map(|e| e.basis)
        };
        let score = match basis {
            Ok(b) => cfg
                .bandwidth_scales
                .iter()
                .map(|&s| cv_for_basis(x, y, &b, &cfg.qopg.tau_grid, s, cfg.qopg.kernel, cfg.smoother, &cfg.qopg.solver))
                .fold(f64::INFINITY, f64::min),
            Err(_) => f64::INFINITY,
        };
        cv.push((q, score));
    }
    let scores: Vec<f64> = cv.iter().map(|c| c.1).collect();
    Ok(DimensionSelection { q_hat: cv[argmin_first(&scores)].0, cv })
}

/// `CV(q)` for one fitted basis at bandwidth `scale * n^{-1/(q+4)} sd(B'X)`.
/// Windows too thin for the smoother fall back to the global sample quantile.
#[allow(clippy::too_many_arguments)]
pub fn cv_for_basis(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: &DMatrix<f64>,
    tau_grid: &[f64],
    scale: f64,
    kernel: KernelSpec,
    smoother: CvSmoother,
    solver: &SolverConfig,
) -> f64 {
    let n = y.len();
    let q = basis.ncols();
    let z = x * basis;
    let h = rule_of_thumb_bandwidth(n, q, scale * mean_sd(&z));
    let rows = RowMajor::from_matrix(&z);
    let set = MultiIndexSet::new(q, 1);
    let mut total = 0.0;
    for &tau in tau_grid {
        let fallback = weighted_quantile(y, &vec![1.0; n], tau).unwrap_or(0.0);
        let spec = LocalFitSpec { tau, h_design: h, h_kernel: h, set: &set, kernel_directions: None, kernel, solver: *solver };
        let losses: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|j| {
                let pred = match smoother {
                    CvSmoother::LocalConstant => {
                        let w: Vec<f64> = (0..n)
                            .map(|i| if i == j { 0.0 } else { kernel_weight(sup_distance(rows.row(i), rows.row(j)), h, kernel) })
                            .collect();
                        weighted_quantile(y, &w, tau).unwrap_or(fallback)
                    }
                    CvSmoother::LocalLinear => fit_rows(&rows, y, rows.row(j), &rows, rows.row(j), &spec, Some(j))
                        .map(|f| f.coeffs[0])
                        .unwrap_or(fallback),
                };
                check_loss(y[j] - pred, tau)
            })
            .collect();
        total += losses.iter().sum::<f64>();
    }
    total
}
