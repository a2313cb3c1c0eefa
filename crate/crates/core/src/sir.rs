//! Sliced inverse regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, symmetric_eigen};
use crate::opg::CsEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SirConfig {
    pub n_slices: usize,
    pub q: usize,
}

impl SirConfig {
    /// 8 slices up to 300 observations, 10 beyond.
    pub fn for_sample_size(n: usize, q: usize) -> Self {
        Self { n_slices: if n <= 300 { 8 } else { 10 }, q }
    }
}

pub fn sir_fit(x: &DMatrix<f64>, y: &[f64], cfg: &SirConfig) -> Result<CsEstimate> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidInput("X and Y have different numbers of rows".into()));
    }
    if cfg.n_slices < 2 || n < 2 * cfg.n_slices {
        return Err(Error::TooFewSlices { n, slices: cfg.n_slices });
    }
    if cfg.q == 0 || cfg.q > p {
        return Err(Error::InvalidInput(format!("dimension {} outside 1..={p}", cfg.q)));
    }

    let mean = DVector::from_iterator(p, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / n as f64;

    // A tiny ridge, then Sigma^{-1/2} from the eigendecomposition.
    let ridge = 1e-10 * cov.trace() / p as f64;
    for k in 0..p {
        cov[(k, k)] += ridge;
    }
    let eig = symmetric_eigen(&cov)?;
    if !(eig.values[p - 1] > 1e-9 * eig.values[0]) {
        return Err(Error::DegenerateCovariance);
    }
    let inv_sqrt = DVector::from_iterator(p, eig.values.iter().map(|v| v.powf(-0.5)));
    let whiten = &eig.vectors * DMatrix::from_diagonal(&inv_sqrt) * eig.vectors.transpose();
    let z = &centered * &whiten;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));

    let h = cfg.n_slices;
    let mut m = DMatrix::zeros(p, p);
    for s in 0..h {
        let lo = s * n / h;
        let hi = (s + 1) * n / h;
        let count = hi - lo;
        let mut slice_mean = DVector::zeros(p);
        for &i in &order[lo..hi] {
            slice_mean += z.row(i).transpose();
        }
        slice_mean /= count as f64;
        m += &slice_mean * slice_mean.transpose() * (count as f64 / n as f64);
    }
    let m = (&m + m.transpose()) * 0.5;
    let eig_m = symmetric_eigen(&m)?;
    let directions = &whiten * eig_m.leading(cfg.q);
    let basis = orthonormalize(&directions)?;

    Ok(CsEstimate {
        basis,
        q: cfg.q,
        eigenvalues: eig_m.values,
        iterations: 1,
        converged: true,
        trace: Vec::new(),
        level_weights: Vec::new(),
        bandwidths: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_validation() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(sir_fit(&x, &y, &SirConfig { n_slices: 8, q: 1 }), Err(Error::TooFewSlices { .. })));
        assert!(matches!(sir_fit(&x, &y, &SirConfig { n_slices: 1, q: 1 }), Err(Error::TooFewSlices { .. })));
    }

    #[test]
    fn singular_covariance() {
        let x = DMatrix::from_fn(40, 3, |i, j| if j == 2 { 2.0 * i as f64 } else { i as f64 * (j + 1) as f64 });
        let y: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        assert_eq!(sir_fit(&x, &y, &SirConfig { n_slices: 4, q: 1 }).unwrap_err(), Error::DegenerateCovariance);
    }

    #[test]
    fn slice_defaults() {
        assert_eq!(SirConfig::for_sample_size(200, 2).n_slices, 8);
        assert_eq!(SirConfig::for_sample_size(400, 2).n_slices, 10);
    }
}
