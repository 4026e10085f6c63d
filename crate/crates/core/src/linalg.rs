//! Thin wrappers over faer for the dense kernels used across the crate.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// `aᵀ b`.
pub fn cross_gram(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.ncols(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a.transpose(), b, 1.0, Par::Seq);
    out
}

pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending
/// order with matching eigenvector columns.
pub fn symmetric_eigen(m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigen-decomposition failed: {e:?}")))?;
    let n = m.nrows();
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<f64> = (0..n).rev().map(|i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((values, vectors))
}

pub struct Svd {
    pub u: Mat<f64>,
    pub s: Vec<f64>,
    pub v: Mat<f64>,
}

/// Thin SVD, singular values descending.
pub fn thin_svd(m: MatRef<'_, f64>) -> Result<Svd> {
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let k = m.nrows().min(m.ncols());
    let s = svd.S().column_vector();
    Ok(Svd {
        u: svd.U().to_owned(),
        s: (0..k).map(|i| s[i]).collect(),
        v: svd.V().to_owned(),
    })
}

pub fn singular_values(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    m.singular_values()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))
}

pub fn frobenius_sq(m: MatRef<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let x = m[(i, j)];
            acc += x * x;
        }
    }
    acc
}

/// Subtracts column means in place.
pub fn center_columns(m: &mut Mat<f64>) {
    let n = m.nrows() as f64;
    for j in 0..m.ncols() {
        let mean = (0..m.nrows()).map(|i| m[(i, j)]).sum::<f64>() / n;
        for i in 0..m.nrows() {
            m[(i, j)] -= mean;
        }
    }
}
