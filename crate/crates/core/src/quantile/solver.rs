//! Weighted check-loss minimization.
//!
//! The objective `sum_i w_i rho_tau(y_i - x_i' c)` is attacked with a
//! majorize-minimize scheme on the smoothed loss
//! `sqrt(s^2 + eps^2) + (2 tau - 1) s`. Each step is a weighted least squares
//! solve. `eps` starts at a fraction of the response IQR and is halved until
//! it reaches its floor.
//!
//! After every `eps` level the iterate is snapped to the vertex interpolating
//! the `s` smallest residuals. A subgradient certificate at that vertex
//! decides whether it is an exact minimizer, in which case the solve stops.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `rho_tau(s) = |s| + (2 tau - 1) s`. Twice the conventional check function.
#[inline]
pub fn check_loss(s: f64, tau: f64) -> f64 {
    s.abs() + (2.0 * tau - 1.0) * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Initial smoothing, relative to the response IQR.
    pub eps_start: f64,
    /// Smoothing floor.
    pub eps_min: f64,
    /// Relative change of the smoothed objective that ends an inner loop.
    pub tol: f64,
    /// Cap on majorize-minimize steps across all smoothing levels.
    pub max_iter: usize,
    /// Ridge (relative to the mean diagonal) added when a step is singular.
    pub ridge: f64,
    /// Majorize-minimize steps between vertex polishing attempts; zero polishes
    /// only at the end of each smoothing level.
    pub polish_every: usize,
    /// Cap on vertex exchanges per polishing attempt; zero only checks the
    /// certificate at the polished vertex.
    pub max_pivots: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { eps_start: 1e-2, eps_min: 1e-8, tol: 1e-10, max_iter: 200, ridge: 1e-8, polish_every: 5, max_pivots: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSolution {
    pub coeffs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Either a vertex passed the optimality certificate or the smoothing
    /// schedule ran to its floor within the iteration cap.
    pub converged: bool,
    /// The returned coefficients carry an exact optimality certificate.
    pub certified: bool,
}

/// The linear map behind a quantile regression, accessed only through the
/// operations the solver needs.
pub trait Design: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out[i] = x_i' c`.
    fn apply(&self, c: &[f64], out: &mut [f64]);
    /// Adds `sum_i v_i x_i x_i'` to the upper triangle of the row-major
    /// `gram` and `sum_i t_i x_i` to `rhs`.
    fn accumulate(&self, v: &[f64], t: &[f64], gram: &mut [f64], rhs: &mut [f64]);
    /// Writes row `i` into `out`.
    fn row_into(&self, i: usize, out: &mut [f64]);
}

/// A dense row-major design.
#[derive(Debug, Clone, Copy)]
pub struct DenseDesign<'a> {
    data: &'a [f64],
    ncols: usize,
}

impl<'a> DenseDesign<'a> {
    pub fn new(data: &'a [f64], ncols: usize) -> Self {
        assert!(ncols > 0 && data.len() % ncols == 0, "design length is not a multiple of its width");
        Self { data, ncols }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }
}

impl Design for DenseDesign<'_> {
    fn nrows(&self) -> usize {
        self.data.len() / self.ncols
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply(&self, c: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), c);
        }
    }

    fn accumulate(&self, v: &[f64], t: &[f64], gram: &mut [f64], rhs: &mut [f64]) {
        for i in 0..self.nrows() {
            if v[i] != 0.0 || t[i] != 0.0 {
                accumulate_row(gram, rhs, self.row(i), v[i], t[i]);
            }
        }
    }

    fn row_into(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(i));
    }
}

/// A weighted linear quantile regression.
#[derive(Debug, Clone, Copy)]
pub struct QuantileProblem<'a, D: Design = DenseDesign<'a>> {
    design: D,
    response: &'a [f64],
    weights: &'a [f64],
    tau: f64,
    /// Per-row levels; overrides `tau` when present.
    levels: Option<&'a [f64]>,
}

impl<'a> QuantileProblem<'a, DenseDesign<'a>> {
    /// Problem over a dense row-major design with `ncols` columns.
    pub fn new(design: &'a [f64], response: &'a [f64], weights: &'a [f64], ncols: usize, tau: f64) -> Result<Self> {
        if ncols == 0 || design.len() != response.len() * ncols {
            return Err(Error::InvalidInput("design and response disagree in size".into()));
        }
        Self::with_design(DenseDesign::new(design, ncols), response, weights, tau)
    }
}

impl<'a, D: Design> QuantileProblem<'a, D> {
    pub fn with_design(design: D, response: &'a [f64], weights: &'a [f64], tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidInput(format!("quantile level {tau} outside (0, 1)")));
        }
        if design.ncols() == 0 || design.nrows() != response.len() || weights.len() != response.len() {
            return Err(Error::InvalidInput("design, response and weights disagree in size".into()));
        }
        Ok(Self { design, response, weights, tau, levels: None })
    }

    /// Composite problem where row `i` is scored at level `levels[i]`.
    pub fn with_levels(design: D, response: &'a [f64], weights: &'a [f64], levels: &'a [f64]) -> Result<Self> {
        if levels.len() != response.len() {
            return Err(Error::InvalidInput("levels and response disagree in size".into()));
        }
        if let Some(t) = levels.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidInput(format!("quantile level {t} outside (0, 1)")));
        }
        let mut problem = Self::with_design(design, response, weights, 0.5)?;
        problem.levels = Some(levels);
        Ok(problem)
    }

    /// `2 tau_i - 1`.
    #[inline]
    fn asym(&self, i: usize) -> f64 {
        match self.levels {
            Some(l) => 2.0 * l[i] - 1.0,
            None => 2.0 * self.tau - 1.0,
        }
    }

    pub fn nrows(&self) -> usize {
        self.response.len()
    }

    pub fn ncols(&self) -> usize {
        self.design.ncols()
    }

    fn residuals_into(&self, c: &[f64], out: &mut [f64]) {
        self.design.apply(c, out);
        for (o, y) in out.iter_mut().zip(self.response) {
            *o = y - *o;
        }
    }

    fn residuals(&self, c: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.nrows()];
        self.residuals_into(c, &mut r);
        r
    }

    pub fn objective(&self, c: &[f64]) -> f64 {
        self.objective_from(&self.residuals(c))
    }

    fn objective_from(&self, r: &[f64]) -> f64 {
        r.iter().zip(self.weights).enumerate().map(|(i, (ri, w))| w * (ri.abs() + self.asym(i) * ri)).sum()
    }

    fn smoothed_from(&self, r: &[f64], eps: f64) -> f64 {
        r.iter()
            .zip(self.weights)
            .enumerate()
            .map(|(i, (ri, w))| w * ((ri * ri + eps * eps).sqrt() + self.asym(i) * ri))
            .sum()
    }

    /// Weighted least squares with the problem weights.
    pub fn weighted_least_squares(&self, ridge: f64) -> Option<Vec<f64>> {
        let s = self.ncols();
        let mut gram = vec![0.0; s * s];
        let mut rhs = vec![0.0; s];
        let t: Vec<f64> = self.weights.iter().zip(self.response).map(|(w, y)| w * y).collect();
        self.design.accumulate(self.weights, &t, &mut gram, &mut rhs);
        solve_spd(gram, rhs, s, ridge)
    }

    /// One majorize-minimize step at smoothing level `eps`, given the
    /// residuals of the current iterate.
    fn mm_step(&self, r: &[f64], eps: f64, ridge: f64, v: &mut [f64], t: &mut [f64]) -> Option<Vec<f64>> {
        let s = self.ncols();
        for i in 0..self.nrows() {
            let w = self.weights[i];
            if w == 0.0 {
                v[i] = 0.0;
                t[i] = 0.0;
                continue;
            }
            let vi = w / (r[i] * r[i] + eps * eps).sqrt();
            v[i] = vi;
            t[i] = vi * self.response[i] + self.asym(i) * w;
        }
        let mut gram = vec![0.0; s * s];
        let mut rhs = vec![0.0; s];
        self.design.accumulate(v, t, &mut gram, &mut rhs);
        solve_spd(gram, rhs, s, ridge)
    }

    /// Minimizes the weighted check loss. `init` seeds the iteration; the
    /// weighted least squares fit is used otherwise. The returned objective
    /// never exceeds that of `init` or of the zero vector.
    pub fn solve(&self, init: Option<&[f64]>, cfg: &SolverConfig) -> Result<QuantileSolution> {
        let s = self.ncols();
        let m = self.nrows();
        let total_weight: f64 = self.weights.iter().sum();
        if m == 0 || total_weight <= 0.0 {
            return Err(Error::InsufficientLocalData { needed: s, found: 0 });
        }

        let mut best = Best::new(vec![0.0; s], self.objective(&vec![0.0; s]));
        let mut c = match init {
            Some(v) => {
                assert_eq!(v.len(), s);
                v.to_vec()
            }
            None => self.weighted_least_squares(cfg.ridge).unwrap_or_else(|| vec![0.0; s]),
        };
        let mut r = self.residuals(&c);
        best.offer(&c, self.objective_from(&r));

        let scale = response_scale(self.response);
        let floor = 1e-13 * scale * total_weight;
        if best.objective <= floor {
            return Ok(best.finish(0, true, true));
        }

        let mut v = vec![0.0; m];
        let mut t = vec![0.0; m];
        let mut eps = (cfg.eps_start * scale).max(cfg.eps_min);
        let mut iterations = 0;
        let mut certified = false;
        let mut converged = false;
        loop {
            let mut prev = self.smoothed_from(&r, eps);
            let mut inner_done = false;
            let mut level_steps = 0;
            while iterations < cfg.max_iter {
                let Some(next) = self.mm_step(&r, eps, cfg.ridge, &mut v, &mut t) else {
                    break;
                };
                iterations += 1;
                level_steps += 1;
                self.residuals_into(&next, &mut r);
                let f = self.smoothed_from(&r, eps);
                if !f.is_finite() {
                    return Err(Error::SolverDiverged(format!("non-finite objective at iteration {iterations}")));
                }
                let rel = (prev - f).abs() / prev.abs().max(f64::MIN_POSITIVE);
                c = next;
                prev = f;
                if rel < cfg.tol {
                    inner_done = true;
                    break;
                }
                if cfg.polish_every > 0
                    && level_steps % cfg.polish_every == 0
                    && self.try_polish(&r, scale, cfg.max_pivots, &mut best)
                {
                    certified = true;
                    break;
                }
            }
            if certified {
                converged = true;
                break;
            }
            best.offer(&c, self.objective_from(&r));
            if best.objective <= floor || self.try_polish(&r, scale, cfg.max_pivots, &mut best) {
                certified = true;
                converged = true;
                break;
            }

            if eps <= cfg.eps_min {
                converged = inner_done;
                break;
            }
            if iterations >= cfg.max_iter {
                break;
            }
            eps = (eps * 0.5).max(cfg.eps_min);
        }
        Ok(best.finish(iterations, converged, certified))
    }

    /// Offers the polished vertex to `best`; true when it is certified optimal.
    fn try_polish(&self, r: &[f64], scale: f64, max_pivots: usize, best: &mut Best) -> bool {
        let Some((vertex, ok, basis)) = self.polish(r, scale) else {
            return false;
        };
        let obj = self.objective(&vertex);
        if ok && obj <= best.objective + 1e-12 * best.objective.abs() {
            best.force(vertex, obj);
            return true;
        }
        best.offer(&vertex, obj);
        if basis.len() < self.ncols() || max_pivots == 0 {
            return false;
        }
        match self.exchange(basis, vertex, scale, max_pivots) {
            Some((c, obj, true)) if obj <= best.objective + 1e-12 * best.objective.abs() => {
                best.force(c, obj);
                true
            }
            Some((c, obj, _)) => {
                best.offer(&c, obj);
                false
            }
            None => false,
        }
    }

    /// Vertex-to-vertex descent. Starting from the vertex interpolating the
    /// rows in `basis`, repeatedly leaves the vertex along the steepest
    /// descending edge and moves to the minimizer along it, until the
    /// subgradient certificate holds or `max_pivots` moves were made.
    /// Returns the last vertex, its objective and whether it is certified.
    fn exchange(&self, mut basis: Vec<usize>, mut c: Vec<f64>, scale: f64, max_pivots: usize) -> Option<(Vec<f64>, f64, bool)> {
        let s = self.ncols();
        let m = self.nrows();
        let zero_tol = 1e-10 * scale.max(1.0);
        let mut r = vec![0.0; m];
        let mut e = vec![0.0; m];
        let mut row = vec![0.0; s];
        let zeros = vec![0.0; m];
        let mut coef = vec![0.0; m];
        let mut scratch = vec![0.0; s * s];
        let mut in_basis = vec![false; m];
        let mut breaks: Vec<(f64, f64, usize)> = Vec::new();
        for pivot in 0..=max_pivots {
            in_basis.iter_mut().for_each(|b| *b = false);
            let mut xb = DMatrix::zeros(s, s);
            for (k, &i) in basis.iter().enumerate() {
                in_basis[i] = true;
                self.design.row_into(i, &mut row);
                for (col, v) in row.iter().enumerate() {
                    xb[(k, col)] = *v;
                }
            }
            let lu = xb.clone().lu();
            // Re-solve for the vertex so that rounding cannot accumulate.
            let yb = DVector::from_iterator(s, basis.iter().map(|&i| self.response[i]));
            let vertex = lu.solve(&yb)?;
            if vertex.iter().any(|v| !v.is_finite()) {
                return None;
            }
            c.copy_from_slice(vertex.as_slice());
            self.residuals_into(&c, &mut r);
            for i in 0..m {
                let w = self.weights[i];
                coef[i] = if w == 0.0 || in_basis[i] {
                    0.0
                } else {
                    let sign = if r[i].abs() <= zero_tol { 0.0 } else { r[i].signum() };
                    w * (sign + self.asym(i))
                };
            }
            scratch.iter_mut().for_each(|v| *v = 0.0);
            let mut g = vec![0.0; s];
            self.design.accumulate(&zeros, &coef, &mut scratch, &mut g);
            let u = xb.transpose().lu().solve(&DVector::from_vec(g))?;

            // Leaving row: largest violation of |u_k + w_k a_k| <= w_k.
            let mut leave = None;
            let mut worst = 0.0;
            for (k, &i) in basis.iter().enumerate() {
                let w = self.weights[i];
                let val = u[k] + w * self.asym(i);
                let excess = val.abs() - w;
                if excess > 1e-9 * w.max(f64::MIN_POSITIVE) + 1e-14 && excess > worst {
                    worst = excess;
                    leave = Some((k, val.signum()));
                }
            }
            let objective = self.objective_from(&r);
            let Some((k, sigma)) = leave else {
                return Some((c, objective, true));
            };
            if pivot == max_pivots {
                return Some((c, objective, false));
            }

            let mut unit = DVector::zeros(s);
            unit[k] = sigma;
            let delta = lu.solve(&unit)?;
            let delta: Vec<f64> = delta.iter().copied().collect();
            self.design.apply(&delta, &mut e);

            // Walk the breakpoints of the piecewise linear objective along
            // the ray until its slope turns non-negative.
            breaks.clear();
            for i in 0..m {
                let w = self.weights[i];
                if w == 0.0 || in_basis[i] || e[i] == 0.0 {
                    continue;
                }
                if r[i].abs() <= zero_tol {
                    breaks.push((0.0, w * e[i].abs(), i));
                } else {
                    let t = r[i] / e[i];
                    if t > 0.0 {
                        breaks.push((t, 2.0 * w * e[i].abs(), i));
                    }
                }
            }
            let (t, enter) = weighted_first_crossing(&mut breaks, worst)?;
            for (cj, dj) in c.iter_mut().zip(&delta) {
                *cj += t * dj;
            }
            basis[k] = enter;
        }
        None
    }

    /// Snaps to the vertex through the rows with the smallest residuals and
    /// checks the subgradient optimality condition there. Rank-deficient
    /// designs use as many independent rows as exist and the minimum-norm
    /// vertex.
    fn polish(&self, residuals: &[f64], scale: f64) -> Option<(Vec<f64>, bool, Vec<usize>)> {
        let s = self.ncols();
        let m = self.nrows();
        let mut order: Vec<usize> = (0..m).filter(|&i| self.weights[i] > 0.0).collect();
        if order.is_empty() {
            return None;
        }
        let by_residual =
            |a: &usize, b: &usize| residuals[*a].abs().total_cmp(&residuals[*b].abs()).then(a.cmp(b));
        let head = (4 * s).min(order.len());
        if head < order.len() {
            order.select_nth_unstable_by(head, by_residual);
        }
        order[..head].sort_by(by_residual);

        let (mut basis, mut rows) = self.independent_rows(&order[..head]);
        if basis.len() < s && head < order.len() {
            order[head..].sort_by(by_residual);
            (basis, rows) = self.independent_rows(&order);
        }
        let r = basis.len();
        if r == 0 {
            return None;
        }

        // X_B is r x s with full row rank.
        let xb = DMatrix::from_fn(r, s, |k, col| rows[k][col]);
        let gram_chol = (&xb * xb.transpose()).cholesky()?;
        let yb = DVector::from_iterator(r, basis.iter().map(|&i| self.response[i]));
        let vertex = xb.transpose() * gram_chol.solve(&yb);
        if vertex.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let vertex: Vec<f64> = vertex.iter().copied().collect();

        let zero_tol = 1e-10 * scale.max(1.0);
        let mut in_basis = vec![false; m];
        for &i in &basis {
            in_basis[i] = true;
        }
        let vres = self.residuals(&vertex);
        let mut coef = vec![0.0; m];
        for i in 0..m {
            let w = self.weights[i];
            if w == 0.0 {
                continue;
            }
            let a = self.asym(i);
            coef[i] = if in_basis[i] {
                w * a
            } else {
                let sign = if vres[i].abs() <= zero_tol { 0.0 } else { vres[i].signum() };
                w * (sign + a)
            };
        }
        // g = sum_i coef_i x_i, via the accumulate hook with zero curvature.
        let zeros = vec![0.0; m];
        let mut scratch = vec![0.0; s * s];
        let mut g = vec![0.0; s];
        self.design.accumulate(&zeros, &coef, &mut scratch, &mut g);
        let g = DVector::from_vec(g);
        let z = -gram_chol.solve(&(&xb * &g));
        let mismatch = (xb.transpose() * &z + &g).amax();
        let g_scale = self.weights.iter().sum::<f64>() * xb.amax().max(1.0);
        let consistent = mismatch <= 1e-9 * g_scale.max(1.0);
        let ok = consistent
            && basis
                .iter()
                .zip(z.iter())
                .all(|(&i, zk)| zk.is_finite() && zk.abs() <= self.weights[i] * (1.0 + 1e-9) + 1e-14);
        Some((vertex, ok, basis))
    }

    fn independent_rows(&self, order: &[usize]) -> (Vec<usize>, Vec<Vec<f64>>) {
        let s = self.ncols();
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(s);
        let mut basis = Vec::with_capacity(s);
        let mut rows = Vec::with_capacity(s);
        let mut buf = vec![0.0; s];
        for &i in order {
            self.design.row_into(i, &mut buf);
            let norm0 = dot(&buf, &buf).sqrt();
            if norm0 == 0.0 {
                continue;
            }
            let mut v = buf.clone();
            for _ in 0..2 {
                for q in &ortho {
                    let proj = dot(&v, q);
                    for (vk, qk) in v.iter_mut().zip(q) {
                        *vk -= proj * qk;
                    }
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-6 * norm0 {
                v.iter_mut().for_each(|x| *x /= norm);
                ortho.push(v);
                basis.push(i);
                rows.push(buf.clone());
                if basis.len() == s {
                    break;
                }
            }
        }
        (basis, rows)
    }
}

/// Smallest breakpoint `t` at which the cumulative increment reaches
/// `target`, with the row attached to it. Reorders `items`.
fn weighted_first_crossing(items: &mut [(f64, f64, usize)], target: f64) -> Option<(f64, usize)> {
    let total: f64 = items.iter().map(|b| b.1).sum();
    if items.is_empty() || total < target {
        return None;
    }
    let by_t = |a: &(f64, f64, usize), b: &(f64, f64, usize)| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2));
    let mut lo = 0;
    let mut hi = items.len();
    let mut need = target;
    while hi - lo > 32 {
        let mid = lo + (hi - lo) / 2;
        items[lo..hi].select_nth_unstable_by(mid - lo, by_t);
        let left: f64 = items[lo..=mid].iter().map(|b| b.1).sum();
        if left >= need {
            hi = mid + 1;
        } else {
            need -= left;
            lo = mid + 1;
        }
    }
    items[lo..hi].sort_unstable_by(by_t);
    let mut acc = 0.0;
    for b in &items[lo..hi] {
        acc += b.1;
        if acc >= need {
            return Some((b.0, b.2));
        }
    }
    items[lo..hi].last().map(|b| (b.0, b.2))
}

struct Best {
    coeffs: Vec<f64>,
    objective: f64,
}

impl Best {
    fn new(coeffs: Vec<f64>, objective: f64) -> Self {
        Self { coeffs, objective }
    }

    fn offer(&mut self, c: &[f64], obj: f64) {
        if obj.is_finite() && obj < self.objective {
            self.coeffs.copy_from_slice(c);
            self.objective = obj;
        }
    }

    fn force(&mut self, c: Vec<f64>, obj: f64) {
        self.coeffs = c;
        self.objective = obj;
    }

    fn finish(self, iterations: usize, converged: bool, certified: bool) -> QuantileSolution {
        QuantileSolution { coeffs: self.coeffs, objective: self.objective, iterations, converged, certified }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `v x x'` to the upper triangle of `gram` and `t x` to `rhs`.
#[inline]
pub(crate) fn accumulate_row(gram: &mut [f64], rhs: &mut [f64], x: &[f64], v: f64, t: f64) {
    let s = x.len();
    for a in 0..s {
        let vx = v * x[a];
        if vx == 0.0 {
            rhs[a] += t * x[a];
            continue;
        }
        let row = &mut gram[a * s..(a + 1) * s];
        for b in a..s {
            row[b] += vx * x[b];
        }
        rhs[a] += t * x[a];
    }
}

/// Solves `G c = rhs` from the upper triangle of a symmetric PSD `G`,
/// retrying with a growing ridge when the factorization fails.
pub(crate) fn solve_spd(mut gram: Vec<f64>, rhs: Vec<f64>, s: usize, ridge: f64) -> Option<Vec<f64>> {
    for a in 0..s {
        for b in 0..a {
            gram[a * s + b] = gram[b * s + a];
        }
    }
    let mean_diag = (0..s).map(|a| gram[a * s + a]).sum::<f64>() / s as f64;
    if !(mean_diag > 0.0) || !mean_diag.is_finite() {
        return None;
    }
    let base = DMatrix::from_row_slice(s, s, &gram);
    let rhs = DVector::from_vec(rhs);
    let mut lambda = 0.0;
    for attempt in 0..6 {
        let mut g = base.clone();
        if lambda > 0.0 {
            for a in 0..s {
                g[(a, a)] += lambda;
            }
        }
        if let Some(chol) = g.cholesky() {
            let c = chol.solve(&rhs);
            if c.iter().all(|v| v.is_finite()) {
                return Some(c.iter().copied().collect());
            }
        }
        lambda = ridge * mean_diag * 100f64.powi(attempt);
    }
    None
}

/// Interquartile range of the response, with fallbacks for flat samples.
fn response_scale(y: &[f64]) -> f64 {
    let mut v = y.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    if iqr > 0.0 {
        return iqr;
    }
    let med = q(0.5);
    let mad = v.iter().map(|x| (x - med).abs()).sum::<f64>() / v.len() as f64;
    if mad > 0.0 {
        mad
    } else {
        1.0
    }
}

/// Exact minimizer of `sum_i w_i rho_tau(y_i - c)`: the lower weighted
/// `tau`-quantile of the sample.
pub fn weighted_quantile(y: &[f64], w: &[f64], tau: f64) -> Option<f64> {
    let mut pairs: Vec<(f64, f64)> = y.iter().zip(w).filter(|(_, &wi)| wi > 0.0).map(|(&a, &b)| (a, b)).collect();
    if pairs.is_empty() {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let target = tau * total;
    let mut acc = 0.0;
    for (v, wi) in &pairs {
        acc += wi;
        if acc >= target * (1.0 - 1e-15) {
            return Some(*v);
        }
    }
    pairs.last().map(|p| p.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(-2.0, 0.5), 2.0);
        assert!((check_loss(1.0, 0.9) - 1.8).abs() < 1e-15);
        assert!((check_loss(-1.0, 0.9) - 0.2).abs() < 1e-15);
        assert_eq!(check_loss(0.0, 0.3), 0.0);
    }

    proptest! {
        #[test]
        fn check_loss_nonnegative_and_convex(a in -50.0f64..50.0, b in -50.0f64..50.0, tau in 0.01f64..0.99) {
            prop_assert!(check_loss(a, tau) >= 0.0);
            let mid = check_loss(0.5 * (a + b), tau);
            prop_assert!(mid <= 0.5 * (check_loss(a, tau) + check_loss(b, tau)) + 1e-12);
            if a > 0.0 {
                prop_assert!((check_loss(a, tau) - 2.0 * tau * a).abs() < 1e-9);
            } else {
                prop_assert!((check_loss(a, tau) - 2.0 * (1.0 - tau) * a.abs()).abs() < 1e-9);
            }
        }
    }

    fn constant_problem<'a>(design: &'a [f64], y: &'a [f64], w: &'a [f64], tau: f64) -> QuantileProblem<'a> {
        QuantileProblem::new(design, y, w, 1, tau).unwrap()
    }

    #[test]
    fn median_of_symmetric_sample() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ones = [1.0; 5];
        let sol = constant_problem(&ones, &y, &ones, 0.5).solve(None, &SolverConfig::default()).unwrap();
        assert!((sol.coeffs[0] - 3.0).abs() < 1e-9);
        assert!(sol.certified);
    }

    #[test]
    fn lower_quartile_matches_grid_search() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ones = [1.0; 5];
        let problem = constant_problem(&ones, &y, &ones, 0.25);
        let grid_best = (0..=600)
            .map(|i| i as f64 * 0.01)
            .map(|c| (c, problem.objective(&[c])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let sol = problem.solve(None, &SolverConfig::default()).unwrap();
        assert!((grid_best.0 - 2.0).abs() < 1e-12);
        assert!((sol.coeffs[0] - 2.0).abs() < 1e-9);
        assert!((sol.objective - grid_best.1).abs() < 1e-9);
    }

    #[test]
    fn weighted_quantile_attains_minimum() {
        let y = [3.0, -1.0, 2.5, 7.0];
        let w = [0.2, 1.0, 0.5, 0.1];
        for &tau in &[0.1, 0.5, 0.8] {
            let q = weighted_quantile(&y, &w, tau).unwrap();
            let ones = [1.0; 4];
            let p = constant_problem(&ones, &y, &w, tau);
            let min = y.iter().map(|&c| p.objective(&[c])).fold(f64::INFINITY, f64::min);
            assert!((p.objective(&[q]) - min).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_linear_data_is_fit_exactly() {
        let xs = [-1.0, -0.5, 0.1, 0.4, 0.9, 1.3];
        let design: Vec<f64> = xs.iter().flat_map(|&x| [1.0, x]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 0.5 + 2.0 * x).collect();
        let w = [1.0, 0.5, 0.3, 0.8, 0.2, 0.9];
        let sol = QuantileProblem::new(&design, &y, &w, 2, 0.7).unwrap().solve(None, &SolverConfig::default()).unwrap();
        assert!((sol.coeffs[1] - 2.0).abs() < 1e-9);
        assert!(sol.objective < 1e-9);
    }

    #[test]
    fn rejects_bad_level() {
        let ones = [1.0; 2];
        assert!(QuantileProblem::new(&ones, &ones, &ones, 1, 1.0).is_err());
    }
}
