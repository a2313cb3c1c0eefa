//! Small dense linear algebra helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// The first `q` eigenvectors.
    pub fn leading(&self, q: usize) -> DMatrix<f64> {
        self.vectors.columns(0, q).into_owned()
    }
}

/// Symmetric eigendecomposition with descending eigenvalues. Each
/// eigenvector is signed so that its largest-magnitude entry is positive.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::InvalidInput("eigendecomposition needs a square matrix".into()));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * m.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let p = m.nrows();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let mut lead = 0;
        for r in 1..p {
            if v[r].abs() > v[lead].abs() * (1.0 + 1e-12) {
                lead = r;
            }
        }
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(k, &v);
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Orthonormal basis of the column span of `b` (thin QR, positive diagonal).
pub fn orthonormalize(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q_cols = b.ncols();
    if q_cols == 0 || b.nrows() < q_cols {
        return Err(Error::RankDeficient);
    }
    let qr = b.clone().qr();
    let r = qr.r();
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let mut q = qr.q();
    for k in 0..q_cols {
        let d = r[(k, k)];
        if !(d.abs() > 1e-12 * scale) {
            return Err(Error::RankDeficient);
        }
        if d < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    Ok(q)
}

/// `B (B'B)^{-1} B'`.
pub fn projection(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = b.transpose() * b;
    let inv = gram.cholesky().ok_or(Error::RankDeficient)?.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    Ok(b * inv * b.transpose())
}

/// Sample standard deviation (denominator `n - 1`) of each column.
pub fn column_sds(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
        })
        .collect()
}

pub fn mean_sd(x: &DMatrix<f64>) -> f64 {
    let sds = column_sds(x);
    sds.iter().sum::<f64>() / sds.len() as f64
}

/// Row-major copy of a sample matrix for tight per-row loops.
#[derive(Debug, Clone)]
pub(crate) struct RowMajor {
    data: Vec<f64>,
    ncols: usize,
}

impl RowMajor {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let ncols = m.ncols();
        let mut data = Vec::with_capacity(m.len());
        for r in m.row_iter() {
            data.extend(r.iter());
        }
        Self { data, ncols }
    }

    pub fn nrows(&self) -> usize {
        if self.ncols == 0 {
            0
        } else {
            self.data.len() / self.ncols
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    /// Rows of `X B`.
    pub fn project(&self, b: &DMatrix<f64>) -> RowMajor {
        let q = b.ncols();
        let mut data = Vec::with_capacity(self.nrows() * q);
        for i in 0..self.nrows() {
            data.extend(Self::project_point(self.row(i), b));
        }
        RowMajor { data, ncols: q }
    }

    pub fn project_point(x: &[f64], b: &DMatrix<f64>) -> Vec<f64> {
        (0..b.ncols()).map(|k| x.iter().zip(b.column(k).iter()).map(|(a, c)| a * c).sum()).collect()
    }
}
