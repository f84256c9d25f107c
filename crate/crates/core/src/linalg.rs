//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative convergence tolerance handed to the symmetric eigensolver.
pub const EIGEN_TOL: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(mat: &DMatrix<f64>) -> Result<SortedEigen> {
    let n = mat.nrows();
    if n == 0 {
        return Ok(SortedEigen {
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let scale = mat.amax().max(f64::MIN_POSITIVE);
    let scaled = mat / scale;
    let eig = SymmetricEigen::try_new(scaled, EIGEN_TOL * f64::EPSILON.sqrt(), 0)
        .ok_or(Error::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i] * scale).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(SortedEigen { values, vectors })
}

/// Largest eigenvalue and a unit eigenvector for it.
pub fn top_eigen(mat: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let eig = sym_eigen(mat)?;
    if eig.values.is_empty() {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    Ok((eig.values[0], eig.vectors.column(0).into_owned()))
}
