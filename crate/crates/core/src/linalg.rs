//! Small dense linear-algebra helpers and the matrix-free operator trait
//! shared by the covariance, low-rank, and filter modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A square linear operator that can only be applied, never inspected.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Applies the operator to every column of `x`. Columns are independent,
    /// so the default runs them in parallel and assembles in column order.
    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::dim("apply_many", self.dim(), x.nrows()));
        }
        let cols: Vec<DVector<f64>> = (0..x.ncols())
            .into_par_iter()
            .map(|j| self.apply(&x.column(j).into_owned()))
            .collect::<Result<_>>()?;
        Ok(columns_to_matrix(x.nrows(), &cols))
    }
}

/// Explicit dense symmetric matrix as an operator.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("dense apply", self.dim(), x.len()));
        }
        Ok(&self.0 * x)
    }

    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::dim("dense apply_many", self.dim(), x.nrows()));
        }
        Ok(&self.0 * x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.0 {
            return Err(Error::dim("identity apply", self.0, x.len()));
        }
        Ok(x.clone())
    }

    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.0 {
            return Err(Error::dim("identity apply_many", self.0, x.nrows()));
        }
        Ok(x.clone())
    }
}

pub(crate) fn columns_to_matrix(nrows: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(nrows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in nonincreasing order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    Cholesky::new(sym).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Moore-Penrose pseudo-inverse together with the 2-norm condition number
/// of `m` (infinite when `m` is rank deficient).
pub(crate) fn pinv_with_cond(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    let cutoff = smax * f64::EPSILON * (m.nrows().max(m.ncols()) as f64);
    let pinv = svd
        .pseudo_inverse(cutoff)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()));
    (pinv, cond)
}
