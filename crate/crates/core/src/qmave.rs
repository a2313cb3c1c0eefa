//! Composite quantile minimum average variance estimation.
//!
//! The criterion is
//! `sum_tau sum_j sum_i rho_tau(Y_i - a_j - b_j' B' X_ij) K_h(X_ij)` with
//! `X_ij = X_i - X_j`. It is minimized by alternating between the local
//! planes `(a_j, b_j)` for fixed `B` and `B` for fixed planes. Both steps are
//! weighted quantile regressions and each is warm started at the current
//! iterate, so with a full-space kernel the criterion never increases. By
//! default the kernel is measured along the current `B` instead, which
//! redefines the criterion every round.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, RowMajor};
use crate::opg::{default_tau_grid, qopg_initial, refined_bandwidth, CsEstimate, QopgConfig};
use crate::quantile::{kernel_weight, sup_distance, Design, KernelSpec, MultiIndexSet, QuantileProblem, SolverConfig};
use crate::selection::{plan_bandwidths, BandwidthRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmaveConfig {
    pub tau_grid: Vec<f64>,
    pub delta_star: f64,
    pub kernel: KernelSpec,
    pub bandwidth: BandwidthRule,
    pub bandwidth_scale: f64,
    /// Measure kernel distances along the current `B` instead of in the full
    /// space. The bandwidth then follows the refinement rule of qOPG and the
    /// criterion changes from round to round.
    pub projected_kernel: bool,
    pub max_rounds: usize,
    /// Relative objective change that ends the alternation.
    pub tol: f64,
    /// Solver for the local planes.
    pub solver: SolverConfig,
    /// Solver for the direction step. It only needs to improve on the
    /// current directions, so it runs a short schedule.
    pub direction_solver: SolverConfig,
}

impl Default for QmaveConfig {
    fn default() -> Self {
        Self {
            tau_grid: default_tau_grid(),
            delta_star: 0.1,
            kernel: KernelSpec::EPANECHNIKOV,
            bandwidth: BandwidthRule::ModifiedCv,
            bandwidth_scale: 2.6,
            projected_kernel: true,
            max_rounds: 50,
            tol: 1e-6,
            solver: SolverConfig::default(),
            direction_solver: direction_solver_default(),
        }
    }
}

/// Short majorize-minimize schedule, certificate checks only at level ends.
pub fn direction_solver_default() -> SolverConfig {
    SolverConfig { max_iter: 40, polish_every: 0, max_pivots: 0, ..SolverConfig::default() }
}

impl QmaveConfig {
    fn initializer(&self) -> QopgConfig {
        QopgConfig {
            tau_grid: self.tau_grid.clone(),
            delta_star: self.delta_star,
            kernel: self.kernel,
            order: 1,
            bandwidth: self.bandwidth,
            bandwidth_scale: self.bandwidth_scale,
            max_rounds: 1,
            adaptive_weights: false,
            solver: self.solver,
            ..QopgConfig::default()
        }
    }
}

/// Intercept and slope of one local fit, with its weighted check loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPlane {
    pub a: f64,
    pub b: DVector<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmaveState {
    /// `p x q`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Indexed `[level][center]`; `None` where the window is too thin.
    pub local_planes: Vec<Vec<Option<LocalPlane>>>,
    pub objective: f64,
}

/// Kernel window of one center: neighbour indices and weights.
#[derive(Debug, Clone, Default)]
struct Window {
    idx: Vec<usize>,
    w: Vec<f64>,
}

fn window(kernel_rows: &RowMajor, j: usize, h: f64, spec: KernelSpec) -> Window {
    let mut win = Window::default();
    let c = kernel_rows.row(j);
    for i in 0..kernel_rows.nrows() {
        let w = kernel_weight(sup_distance(kernel_rows.row(i), c), h, spec);
        if w > 0.0 {
            win.idx.push(i);
            win.w.push(w);
        }
    }
    win
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], basis: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput("X and Y have different numbers of rows".into()));
    }
    if basis.nrows() != x.ncols() || basis.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "direction matrix is {}x{}, expected {}xq",
            basis.nrows(),
            basis.ncols(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Local fit of `Y_i ~ a + b' Z_ij` over a window, `Z = X B`. With
/// `free_slope` false the slope is pinned at zero.
fn fit_plane(
    z: &RowMajor,
    y: &[f64],
    j: usize,
    win: &Window,
    tau: f64,
    free_slope: bool,
    init: Option<&LocalPlane>,
    solver: &SolverConfig,
) -> Result<LocalPlane> {
    let q = z.ncols();
    let s = if free_slope { q + 1 } else { 1 };
    if win.idx.len() < s {
        return Err(Error::InsufficientLocalData { needed: s, found: win.idx.len() });
    }
    let zj = z.row(j);
    let mut design = Vec::with_capacity(win.idx.len() * s);
    let mut resp = Vec::with_capacity(win.idx.len());
    for &i in &win.idx {
        design.push(1.0);
        if free_slope {
            design.extend(z.row(i).iter().zip(zj).map(|(a, b)| a - b));
        }
        resp.push(y[i]);
    }
    let start: Option<Vec<f64>> = init.map(|p| {
        let mut c = vec![p.a];
        if free_slope {
            c.extend(p.b.iter());
        }
        c
    });
    let sol = QuantileProblem::new(&design, &resp, &win.w, s, tau)?.solve(start.as_deref(), solver)?;
    let b = if free_slope { DVector::from_column_slice(&sol.coeffs[1..]) } else { DVector::zeros(q) };
    Ok(LocalPlane { a: sol.coeffs[0], b, objective: sol.objective })
}

fn kernel_rows(rows: &RowMajor, z: &RowMajor, projected: bool) -> RowMajor {
    if projected {
        z.clone()
    } else {
        rows.clone()
    }
}

fn single_step(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: &DMatrix<f64>,
    tau: f64,
    h: f64,
    j: usize,
    spec: KernelSpec,
    projected: bool,
    free_slope: bool,
) -> Result<LocalPlane> {
    check_inputs(x, y, basis)?;
    if j >= y.len() {
        return Err(Error::InvalidInput(format!("center index {j} out of range")));
    }
    let rows = RowMajor::from_matrix(x);
    let z = rows.project(basis);
    let win = window(&kernel_rows(&rows, &z, projected), j, h, spec);
    fit_plane(&z, y, j, &win, tau, free_slope, None, &SolverConfig::default())
}

/// Local plane at center `j` for fixed directions `basis`.
#[allow(clippy::too_many_arguments)]
pub fn qmave_local_step(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: &DMatrix<f64>,
    tau: f64,
    h: f64,
    center_index: usize,
    spec: KernelSpec,
    use_projected_kernel: bool,
) -> Result<LocalPlane> {
    single_step(x, y, basis, tau, h, center_index, spec, use_projected_kernel, true)
}

/// As [`qmave_local_step`] with the slope held at zero.
#[allow(clippy::too_many_arguments)]
pub fn qmave_local_constant_step(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: &DMatrix<f64>,
    tau: f64,
    h: f64,
    center_index: usize,
    spec: KernelSpec,
    use_projected_kernel: bool,
) -> Result<LocalPlane> {
    single_step(x, y, basis, tau, h, center_index, spec, use_projected_kernel, false)
}

/// The design of the direction step. Row `(i, j)` of block `(tau, j)` is
/// `vec(X_ij b_j')`, so that its inner product with `vec(B)` is `b_j' B' X_ij`.
struct KroneckerDesign<'a> {
    rows: &'a RowMajor,
    p: usize,
    q: usize,
    /// Per block: center, slope, first and one-past-last row.
    blocks: Vec<(usize, Vec<f64>, usize, usize)>,
    /// Per row: neighbour index and block.
    entries: Vec<(usize, usize)>,
}

impl KroneckerDesign<'_> {
    #[inline]
    fn displacement(&self, i: usize, j: usize, out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(self.rows.row(i)).zip(self.rows.row(j)) {
            *o = a - b;
        }
    }
}

impl Design for KroneckerDesign<'_> {
    fn nrows(&self) -> usize {
        self.entries.len()
    }

    fn ncols(&self) -> usize {
        self.p * self.q
    }

    fn apply(&self, c: &[f64], out: &mut [f64]) {
        let p = self.p;
        let mut u = vec![0.0; p];
        for (j, b, start, end) in &self.blocks {
            u.iter_mut().for_each(|v| *v = 0.0);
            for (k, bk) in b.iter().enumerate() {
                for a in 0..p {
                    u[a] += c[a + k * p] * bk;
                }
            }
            let uj: f64 = self.rows.row(*j).iter().zip(&u).map(|(x, v)| x * v).sum();
            for r in *start..*end {
                let i = self.entries[r].0;
                out[r] = self.rows.row(i).iter().zip(&u).map(|(x, v)| x * v).sum::<f64>() - uj;
            }
        }
    }

    fn accumulate(&self, v: &[f64], t: &[f64], gram: &mut [f64], rhs: &mut [f64]) {
        let (p, q) = (self.p, self.q);
        let s = p * q;
        let mut sm = vec![0.0; p * p];
        let mut sr = vec![0.0; p];
        let mut d = vec![0.0; p];
        for (j, b, start, end) in &self.blocks {
            sm.iter_mut().for_each(|x| *x = 0.0);
            sr.iter_mut().for_each(|x| *x = 0.0);
            let mut any = false;
            for r in *start..*end {
                if v[r] == 0.0 && t[r] == 0.0 {
                    continue;
                }
                any = true;
                self.displacement(self.entries[r].0, *j, &mut d);
                crate::quantile::accumulate_row(&mut sm, &mut sr, &d, v[r], t[r]);
            }
            if !any {
                continue;
            }
            for k in 0..q {
                for a in 0..p {
                    let alpha = a + k * p;
                    rhs[alpha] += sr[a] * b[k];
                    let row = &mut gram[alpha * s..(alpha + 1) * s];
                    for k2 in k..q {
                        let bb = b[k] * b[k2];
                        if bb == 0.0 {
                            continue;
                        }
                        let a0 = if k2 == k { a } else { 0 };
                        for a2 in a0..p {
                            let sv = if a <= a2 { sm[a * p + a2] } else { sm[a2 * p + a] };
                            row[a2 + k2 * p] += sv * bb;
                        }
                    }
                }
            }
        }
    }

    fn row_into(&self, r: usize, out: &mut [f64]) {
        let (i, blk) = self.entries[r];
        let (j, b, _, _) = &self.blocks[blk];
        let mut d = vec![0.0; self.p];
        self.displacement(i, *j, &mut d);
        for k in 0..self.q {
            for a in 0..self.p {
                out[a + k * self.p] = d[a] * b[k];
            }
        }
    }
}

/// Minimizes the criterion over unconstrained `B` with the planes fixed.
/// Returns the minimizer (not orthonormalized) and its objective.
fn direction_solve(
    rows: &RowMajor,
    y: &[f64],
    planes: &[Vec<Option<LocalPlane>>],
    windows: &[Vec<Window>],
    tau_grid: &[f64],
    init: &DMatrix<f64>,
    solver: &SolverConfig,
) -> Result<(DMatrix<f64>, f64)> {
    let (p, q) = init.shape();
    let mut blocks = Vec::new();
    let mut entries = Vec::new();
    let mut resp = Vec::new();
    let mut weights = Vec::new();
    let mut levels = Vec::new();
    for (t, &tau) in tau_grid.iter().enumerate() {
        for (j, plane) in planes[t].iter().enumerate() {
            let Some(plane) = plane else { continue };
            let win = &windows[t][j];
            let start = entries.len();
            let blk = blocks.len();
            for (&i, &w) in win.idx.iter().zip(&win.w) {
                entries.push((i, blk));
                resp.push(y[i] - plane.a);
                weights.push(w);
                levels.push(tau);
            }
            blocks.push((j, plane.b.iter().copied().collect::<Vec<f64>>(), start, entries.len()));
        }
    }
    if entries.is_empty() {
        return Err(Error::InsufficientData("no usable local planes".into()));
    }
    let design = KroneckerDesign { rows, p, q, blocks, entries };
    let problem = QuantileProblem::with_levels(design, &resp, &weights, &levels)?;
    let start: Vec<f64> = init.iter().copied().collect();
    let sol = problem.solve(Some(&start), solver)?;
    Ok((DMatrix::from_column_slice(p, q, &sol.coeffs), sol.objective))
}

/// Local planes at every level and center for fixed `basis`.
#[allow(clippy::too_many_arguments)]
fn all_planes(
    rows: &RowMajor,
    y: &[f64],
    basis: &DMatrix<f64>,
    tau_grid: &[f64],
    windows: &[Vec<Window>],
    warm: Option<&[Vec<Option<LocalPlane>>]>,
    solver: &SolverConfig,
) -> Result<(Vec<Vec<Option<LocalPlane>>>, f64)> {
    let n = rows.nrows();
    let z = rows.project(basis);
    let jobs: Vec<(usize, usize)> = (0..tau_grid.len()).flat_map(|t| (0..n).map(move |j| (t, j))).collect();
    let fits: Vec<Result<Option<LocalPlane>>> = jobs
        .par_iter()
        .map(|&(t, j)| {
            let init = warm.and_then(|w| w[t][j].as_ref());
            match fit_plane(&z, y, j, &windows[t][j], tau_grid[t], true, init, solver) {
                Ok(p) => Ok(Some(p)),
                Err(Error::InsufficientLocalData { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut planes = vec![Vec::with_capacity(n); tau_grid.len()];
    let mut objective = 0.0;
    for ((t, _), fit) in jobs.into_iter().zip(fits) {
        let fit = fit?;
        if let Some(p) = &fit {
            objective += p.objective;
        }
        planes[t].push(fit);
    }
    if planes.iter().flatten().all(Option::is_none) {
        return Err(Error::InsufficientData("every local window is too thin".into()));
    }
    Ok((planes, objective))
}

fn build_windows(rows: &RowMajor, kernel_rows: &RowMajor, bandwidths: &[f64], spec: KernelSpec) -> Vec<Vec<Window>> {
    let n = rows.nrows();
    bandwidths
        .iter()
        .map(|&h| (0..n).into_par_iter().map(|j| window(kernel_rows, j, h, spec)).collect())
        .collect()
}

/// Local planes at every level and center for fixed `basis`, with the full
/// dimensional kernel at bandwidth `h`. The objective is the criterion
/// minimized over the planes.
pub fn qmave_state(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: &DMatrix<f64>,
    tau_grid: &[f64],
    h: f64,
    spec: KernelSpec,
) -> Result<QmaveState> {
    check_inputs(x, y, basis)?;
    let rows = RowMajor::from_matrix(x);
    let windows = build_windows(&rows, &rows, &vec![h; tau_grid.len()], spec);
    let (local_planes, objective) = all_planes(&rows, y, basis, tau_grid, &windows, None, &SolverConfig::default())?;
    Ok(QmaveState { basis: basis.clone(), local_planes, objective })
}

/// Criterion value for given directions and fixed planes, full dimensional
/// kernel at bandwidth `h`.
pub fn qmave_objective(
    x: &DMatrix<f64>,
    y: &[f64],
    basis: &DMatrix<f64>,
    planes: &[Vec<Option<LocalPlane>>],
    tau_grid: &[f64],
    h: f64,
    spec: KernelSpec,
) -> Result<f64> {
    check_inputs(x, y, basis)?;
    let rows = RowMajor::from_matrix(x);
    let z = rows.project(basis);
    let mut total = 0.0;
    for (t, &tau) in tau_grid.iter().enumerate() {
        for (j, plane) in planes[t].iter().enumerate() {
            let Some(plane) = plane else { continue };
            let win = window(&rows, j, h, spec);
            for (&i, &w) in win.idx.iter().zip(&win.w) {
                let fit: f64 = plane.a
                    + z.row(i).iter().zip(z.row(j)).zip(plane.b.iter()).map(|((a, b), c)| (a - b) * c).sum::<f64>();
                total += w * crate::quantile::check_loss(y[i] - fit, tau);
            }
        }
    }
    Ok(total)
}

/// Directions minimizing the criterion with `state.local_planes` fixed,
/// orthonormalized. Unlike the steps inside [`qmave_fit`], this solves the
/// direction problem to optimality.
pub fn qmave_direction_step(
    x: &DMatrix<f64>,
    y: &[f64],
    state: &QmaveState,
    tau_grid: &[f64],
    h: f64,
    spec: KernelSpec,
) -> Result<DMatrix<f64>> {
    check_inputs(x, y, &state.basis)?;
    if state.local_planes.len() != tau_grid.len() || state.local_planes.iter().any(|l| l.len() != y.len()) {
        return Err(Error::InvalidInput("local planes do not match the level grid and sample".into()));
    }
    let rows = RowMajor::from_matrix(x);
    let windows = build_windows(&rows, &rows, &vec![h; tau_grid.len()], spec);
    let (b, _) = direction_solve(&rows, y, &state.local_planes, &windows, tau_grid, &state.basis, &SolverConfig::default())?;
    orthonormalize(&b)
}

/// `B = Q R` with `Q` orthonormal. `None` when `B` is rank deficient.
fn qr_split(b: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let q = orthonormalize(b).ok()?;
    let r = q.transpose() * b;
    Some((q, r))
}

/// Composite quantile MAVE estimate of a `q`-dimensional central subspace.
pub fn qmave_fit(x: &DMatrix<f64>, y: &[f64], q: usize, cfg: &QmaveConfig) -> Result<CsEstimate> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::InvalidInput("X and Y have different numbers of rows".into()));
    }
    if cfg.tau_grid.is_empty() {
        return Err(Error::Config("empty quantile grid".into()));
    }
    if cfg.max_rounds == 0 {
        return Err(Error::Config("at least one round is required".into()));
    }
    if q == 0 || q > p {
        return Err(Error::InsufficientData(format!("structural dimension {q} must lie in 1..={p}")));
    }
    if n <= p + 1 {
        return Err(Error::InsufficientData(format!("{n} samples for {p} covariates")));
    }

    // The full-space plan is only needed when distances are not projected.
    let full_h: Vec<f64> = if cfg.projected_kernel {
        Vec::new()
    } else {
        let set = MultiIndexSet::new(p, 1);
        let plan = plan_bandwidths(x, y, cfg.bandwidth, &cfg.tau_grid, &set, cfg.kernel, cfg.bandwidth_scale, &cfg.solver)?;
        cfg.tau_grid.iter().map(|&t| plan.h_for(t)).collect()
    };

    let mut basis = if q == p {
        DMatrix::identity(p, p)
    } else {
        let init = qopg_initial(x, y, q, &cfg.initializer(), false)?;
        orthonormalize(&init.eigenvectors.columns(0, q).into_owned())?
    };

    let rows = RowMajor::from_matrix(x);
    let bandwidths_for = |b: &DMatrix<f64>| -> Vec<f64> {
        if !cfg.projected_kernel {
            return full_h.clone();
        }
        match cfg.bandwidth {
            BandwidthRule::Fixed(h) => vec![h; cfg.tau_grid.len()],
            _ => vec![refined_bandwidth(x, b, cfg.bandwidth_scale); cfg.tau_grid.len()],
        }
    };
    let windows_for = |b: &DMatrix<f64>, h: &[f64]| {
        if cfg.projected_kernel {
            build_windows(&rows, &rows.project(b), h, cfg.kernel)
        } else {
            build_windows(&rows, &rows, h, cfg.kernel)
        }
    };

    let mut h = bandwidths_for(&basis);
    let mut windows = windows_for(&basis, &h);
    let (mut planes, mut objective) = all_planes(&rows, y, &basis, &cfg.tau_grid, &windows, None, &cfg.solver)?;
    let mut trace = vec![objective];
    let mut converged = false;
    let mut rounds = 0;

    while rounds < cfg.max_rounds {
        rounds += 1;
        let (raw, _) = direction_solve(&rows, y, &planes, &windows, &cfg.tau_grid, &basis, &cfg.direction_solver)?;
        let Some((next, r)) = qr_split(&raw) else {
            converged = true;
            break;
        };
        for plane in planes.iter_mut().flatten().flatten() {
            plane.b = &r * &plane.b;
        }
        if cfg.projected_kernel {
            h = bandwidths_for(&next);
            windows = windows_for(&next, &h);
        }
        let (new_planes, new_objective) = all_planes(&rows, y, &next, &cfg.tau_grid, &windows, Some(&planes), &cfg.solver)?;
        basis = next;
        planes = new_planes;
        let change = (objective - new_objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        objective = new_objective;
        trace.push(objective);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(CsEstimate {
        basis,
        q,
        eigenvalues: DVector::zeros(0),
        iterations: rounds,
        converged,
        trace,
        level_weights: cfg.tau_grid.iter().map(|&t| (t, 1.0)).collect(),
        bandwidths: cfg.tau_grid.iter().copied().zip(h).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_window() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.1, 0.0, -0.1, 0.0]);
        let y = [1.0, 2.0, 3.0];
        let basis = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let plane = qmave_local_step(&x, &y, &basis, 0.5, 10.0, 0, KernelSpec::UNIFORM, false).unwrap();
        assert!((plane.a - 2.0).abs() < 1e-9);
    }

    #[test]
    fn kronecker_rows_match_apply() {
        let x = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let rows = RowMajor::from_matrix(&x);
        let design = KroneckerDesign {
            rows: &rows,
            p: 3,
            q: 2,
            blocks: vec![(0, vec![1.0, -0.5], 0, 3), (4, vec![0.25, 2.0], 3, 6)],
            entries: vec![(1, 0), (2, 0), (5, 0), (0, 1), (3, 1), (5, 1)],
        };
        let c = [0.3, -1.0, 0.7, 1.1, 0.2, -0.4];
        let mut out = vec![0.0; 6];
        design.apply(&c, &mut out);
        let mut row = vec![0.0; 6];
        let v = [1.0, 0.5, 2.0, 0.0, 1.5, 3.0];
        let t = [0.2, -1.0, 0.4, 1.0, 0.0, 0.3];
        let mut gram = vec![0.0; 36];
        let mut rhs = vec![0.0; 6];
        design.accumulate(&v, &t, &mut gram, &mut rhs);
        let mut gram_ref = vec![0.0; 36];
        let mut rhs_ref = vec![0.0; 6];
        for r in 0..6 {
            design.row_into(r, &mut row);
            let direct: f64 = row.iter().zip(&c).map(|(a, b)| a * b).sum();
            assert!((direct - out[r]).abs() < 1e-12);
            crate::quantile::accumulate_row(&mut gram_ref, &mut rhs_ref, &row, v[r], t[r]);
        }
        for a in 0..6 {
            assert!((rhs[a] - rhs_ref[a]).abs() < 1e-12);
            for b in a..6 {
                assert!((gram[a * 6 + b] - gram_ref[a * 6 + b]).abs() < 1e-12);
            }
        }
    }
}
