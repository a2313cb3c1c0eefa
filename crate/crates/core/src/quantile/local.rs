use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::{kernel_weight, sup_distance, KernelSpec, MultiIndexSet};
use super::solver::{QuantileProblem, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::RowMajor;

/// One local polynomial quantile fit `c_hat(x; tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub center: Vec<f64>,
    pub tau: f64,
    /// Bandwidth used to scale the design; gradients divide by it.
    pub bandwidth: f64,
    pub kernel_bandwidth: f64,
    pub coeffs: Vec<f64>,
    pub n_effective: usize,
    pub objective: f64,
    pub converged: bool,
}

/// Settings shared by every local fit at one level.
#[derive(Debug, Clone, Copy)]
pub struct LocalFitSpec<'a> {
    pub tau: f64,
    pub h_design: f64,
    pub h_kernel: f64,
    pub set: &'a MultiIndexSet,
    /// When present the kernel distance is `|B'(X_i - x)|` instead of `|X_i - x|`.
    pub kernel_directions: Option<&'a DMatrix<f64>>,
    pub kernel: KernelSpec,
    pub solver: SolverConfig,
}

/// Local polynomial quantile fit at `center`, minimizing
/// `sum_i rho_tau(Y_i - c' x_i(h_design, A)) K_{h_kernel}(d_i)`.
pub fn fit_local_quantile(x: &DMatrix<f64>, y: &[f64], center: &[f64], spec: &LocalFitSpec<'_>) -> Result<LocalFit> {
    if x.nrows() != y.len() || x.ncols() != spec.set.dim() || center.len() != x.ncols() {
        return Err(Error::InvalidInput("sample, response and center dimensions disagree".into()));
    }
    let rows = RowMajor::from_matrix(x);
    match spec.kernel_directions {
        Some(b) => {
            let proj = rows.project(b);
            let c_proj = RowMajor::project_point(center, b);
            fit_rows(&rows, y, center, &proj, &c_proj, spec, None)
        }
        None => fit_rows(&rows, y, center, &rows, center, spec, None),
    }
}

/// Workhorse behind [`fit_local_quantile`] operating on precomputed row-major
/// data. `kernel_rows`/`kernel_center` are the coordinates the kernel
/// distance is measured in. `exclude` drops one sample (leave-one-out).
pub(crate) fn fit_rows(
    rows: &RowMajor,
    y: &[f64],
    center: &[f64],
    kernel_rows: &RowMajor,
    kernel_center: &[f64],
    spec: &LocalFitSpec<'_>,
    exclude: Option<usize>,
) -> Result<LocalFit> {
    let s = spec.set.len();
    let p = rows.ncols();
    let mut design = Vec::new();
    let mut resp = Vec::new();
    let mut weights = Vec::new();
    let mut disp = vec![0.0; p];
    let mut dv = vec![0.0; s];
    for i in 0..rows.nrows() {
        if exclude == Some(i) {
            continue;
        }
        let w = kernel_weight(sup_distance(kernel_rows.row(i), kernel_center), spec.h_kernel, spec.kernel);
        if w <= 0.0 {
            continue;
        }
        for ((d, a), b) in disp.iter_mut().zip(rows.row(i)).zip(center) {
            *d = a - b;
        }
        spec.set.design_into(&disp, spec.h_design, &mut dv);
        design.extend_from_slice(&dv);
        resp.push(y[i]);
        weights.push(w);
    }
    let n_effective = resp.len();
    if n_effective < s {
        return Err(Error::InsufficientLocalData { needed: s, found: n_effective });
    }

    let mut fit = LocalFit {
        center: center.to_vec(),
        tau: spec.tau,
        bandwidth: spec.h_design,
        kernel_bandwidth: spec.h_kernel,
        coeffs: vec![0.0; s],
        n_effective,
        objective: 0.0,
        converged: true,
    };
    // Flat response in the window: the constant fit is exact.
    if resp.iter().all(|&v| v == resp[0]) {
        fit.coeffs[0] = resp[0];
        return Ok(fit);
    }

    let problem = QuantileProblem::new(&design, &resp, &weights, s, spec.tau)?;
    let sol = problem.solve(None, &spec.solver)?;
    fit.coeffs = sol.coeffs;
    fit.objective = sol.objective;
    fit.converged = sol.converged;
    Ok(fit)
}

/// `h^{-1}` times the first-order coefficients, in coordinate order.
pub fn extract_gradient(fit: &LocalFit, set: &MultiIndexSet) -> Result<Vec<f64>> {
    if set.order() == 0 {
        return Err(Error::OrderTooLow(0));
    }
    if fit.coeffs.len() != set.len() {
        return Err(Error::InvalidInput("fit does not match the multi-index set".into()));
    }
    Ok(fit.coeffs[set.first_order_positions()].iter().map(|c| c / fit.bandwidth).collect())
}
