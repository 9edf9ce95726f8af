//! Dense, fast low-rank, extended, and ensemble filters for the random-walk
//! forecast model `s_{k+1} = s_k + w_k`, `w_k ~ N(0, Gamma)`.

mod boxcox;
mod dense;
mod enkf;
mod fekf;
mod fkf;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use boxcox::{BoxCox, TransformMode};
pub use dense::{dense_kf_step, DenseFilterState};
pub use enkf::{enkf_step, EnkfOptions, Ensemble, DEFAULT_ENSEMBLE_SIZE};
pub use fekf::{
    ekf_linearize, fekf_step, FekfDiagnostics, FekfOptions, DEFAULT_TRUNC_TOL, MAX_RELINEARIZATIONS,
};
pub use fkf::{fkf_init, fkf_step, update_diagonal, FkfModel};

use crate::error::{Error, Result};

/// Covariance `alpha Gamma - W diag(d) W^T` with `W^T Gamma^{-1} W = I`,
/// plus the state estimate.
#[derive(Debug, Clone)]
pub struct LowRankState {
    pub alpha: f64,
    pub d: DVector<f64>,
    pub w: Arc<DMatrix<f64>>,
    /// `Gamma^{-1} W`.
    pub w_dual: Arc<DMatrix<f64>>,
    pub mean: DVector<f64>,
    pub step: usize,
}

impl LowRankState {
    /// Zero mean with zero covariance: `alpha = 0`, empty basis.
    pub fn initial(n: usize) -> Self {
        LowRankState {
            alpha: 0.0,
            d: DVector::zeros(0),
            w: fekf::empty_basis(n),
            w_dual: fekf::empty_basis(n),
            mean: DVector::zeros(n),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    /// `0 <= d_i < alpha` whenever `alpha > 0`, and consistent shapes.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.w.nrows() != n || self.w.ncols() != self.rank() {
            return Err(Error::dim(
                "low-rank basis columns",
                self.rank(),
                self.w.ncols(),
            ));
        }
        if self.w_dual.shape() != self.w.shape() {
            return Err(Error::dim(
                "low-rank dual columns",
                self.w.ncols(),
                self.w_dual.ncols(),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if let Some((index, &value)) = self
            .d
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v < self.alpha))
        {
            return Err(Error::Domain { index, value });
        }
        Ok(())
    }

    /// `alpha Gamma - W D W^T` given the dense `Gamma`.
    pub fn covariance_dense(&self, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        let mut wd = (*self.w).clone();
        for (j, dj) in self.d.iter().enumerate() {
            wd.column_mut(j).scale_mut(*dj);
        }
        let mut out = gamma * self.alpha;
        out.gemm(-1.0, &wd, &self.w.transpose(), 1.0);
        out
    }
}
