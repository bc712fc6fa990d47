//! Small dense helpers on top of nalgebra used by the estimators and planners.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a direction counts as outside the range.
pub const RANGE_TOL: f64 = 1e-10;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Condition number of a symmetric matrix; infinite when it is not positive definite.
pub fn sym_condition(a: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(a);
    if vals.is_empty() {
        return 1.0;
    }
    let max = vals[0];
    let min = vals[vals.len() - 1];
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn sym_pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (vals, vecs) = sym_eigen(a);
    let mut out = DMatrix::zeros(n, n);
    let top = vals.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return out;
    }
    for k in 0..n {
        if vals[k] > RANGE_TOL * top {
            let v = vecs.column(k);
            out += (v * v.transpose()) / vals[k];
        }
    }
    out
}

/// Number of eigenvalues above `RANGE_TOL` times the largest.
pub fn sym_rank(a: &DMatrix<f64>) -> usize {
    let (vals, _) = sym_eigen(a);
    let top = vals.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > RANGE_TOL * top).count()
}

/// Solves a symmetric positive definite system, falling back to LU when
/// Cholesky rejects the matrix.
pub fn solve_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular symmetric system".into()))
}

pub fn solve_sym_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    Ok(solve_sym(a, &m)?.column(0).into_owned())
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Serde adapter storing a `DMatrix` as a list of rows.
pub mod rows_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
