use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal measurement-noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalNoise {
    variances: DVector<f64>,
}

impl DiagonalNoise {
    pub fn new(variances: DVector<f64>) -> Result<Self> {
        if let Some((i, &v)) = variances
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "noise variance {i} must be positive and finite, got {v}"
            )));
        }
        Ok(DiagonalNoise { variances })
    }

    pub fn isotropic(n: usize, sigma2: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, sigma2))
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn variances(&self) -> &DVector<f64> {
        &self.variances
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.variances)
    }

    /// `R^{-1} x`
    pub fn inverse_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_div(&self.variances)
    }

    /// Adds `R` onto the diagonal of `m` in place.
    pub fn add_to(&self, m: &mut DMatrix<f64>) {
        for (i, v) in self.variances.iter().enumerate() {
            m[(i, i)] += v;
        }
    }
}
