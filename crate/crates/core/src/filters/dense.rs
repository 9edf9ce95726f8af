use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};
use crate::noise::DiagonalNoise;
use crate::tomography::MeasurementOperator;

/// Full-covariance filter state.
#[derive(Debug, Clone)]
pub struct DenseFilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub step: usize,
}

impl DenseFilterState {
    /// Zero mean and zero covariance.
    pub fn initial(n: usize) -> Self {
        DenseFilterState {
            mean: DVector::zeros(n),
            cov: DMatrix::zeros(n, n),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// One predict/update cycle of the standard filter with identity dynamics;
/// `gamma` is the dense system-noise covariance.
pub fn dense_kf_step(
    state: &DenseFilterState,
    h: &MeasurementOperator,
    y: &DVector<f64>,
    gamma: &DMatrix<f64>,
    noise: &DiagonalNoise,
) -> Result<DenseFilterState> {
    let n = state.len();
    if gamma.shape() != (n, n) || state.cov.shape() != (n, n) {
        return Err(Error::dim("dense KF covariance", n, gamma.nrows()));
    }
    if h.ncols() != n {
        return Err(Error::dim("dense KF operator columns", n, h.ncols()));
    }
    if y.len() != h.nrows() || noise.len() != h.nrows() {
        return Err(Error::dim("dense KF observations", h.nrows(), y.len()));
    }
    let predicted = &state.cov + gamma;
    let innovation = y - h.apply(&state.mean)?;
    let (mean, cov) = dense_update(&state.mean, predicted, h, &innovation, noise)?;
    Ok(DenseFilterState {
        mean,
        cov,
        step: state.step + 1,
    })
}

/// Gain-form update of `(mean, P)` given `H` and an innovation vector.
pub(crate) fn dense_update(
    mean: &DVector<f64>,
    mut p: DMatrix<f64>,
    h: &MeasurementOperator,
    innovation: &DVector<f64>,
    noise: &DiagonalNoise,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    // P is symmetric, so H P = (P H^T)^T is formed from sparse rows
    let hp = h.apply_mat(&p)?;
    let mut s = h.apply_mat(&hp.transpose())?;
    noise.add_to(&mut s);
    let chol = cholesky(&s, "innovation covariance")?;
    let z = chol.solve(innovation);
    let mean = mean + hp.tr_mul(&z);
    // P - (HP)^T S^{-1} (HP)
    let s_inv_hp = chol.solve(&hp);
    p.gemm_tr(-1.0, &hp, &s_inv_hp, 1.0);
    symmetrize(&mut p);
    Ok((mean, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_recursion() {
        let h = MeasurementOperator::from_dense(&DMatrix::from_element(1, 1, 2.0));
        let noise = DiagonalNoise::isotropic(1, 0.5).unwrap();
        let gamma = DMatrix::from_element(1, 1, 0.3);
        let mut state = DenseFilterState::initial(1);
        let (mut m, mut s) = (0.0_f64, 0.0_f64);
        for (k, yv) in [1.0, 0.4, -0.7, 2.2].iter().enumerate() {
            let y = DVector::from_element(1, *yv);
            state = dense_kf_step(&state, &h, &y, &gamma, &noise).unwrap();
            let p = s + 0.3;
            let gain = p * 2.0 / (4.0 * p + 0.5);
            m += gain * (yv - 2.0 * m);
            s = p - gain * 2.0 * p;
            assert_eq!(state.step, k + 1);
            assert!((state.mean[0] - m).abs() < 1e-14);
            assert!((state.cov[(0, 0)] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn no_information_limit() {
        let hd = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 2.0]);
        let h = MeasurementOperator::from_dense(&hd);
        let gamma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.3, 0.1, 0.3, 1.0]);
        let mut state = DenseFilterState::initial(3);
        state.mean = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let scale = (&hd * &gamma * hd.transpose()).norm();
        let noise = DiagonalNoise::isotropic(2, 1e12 * scale).unwrap();
        let y = DVector::from_vec(vec![5.0, -3.0]);
        let next = dense_kf_step(&state, &h, &y, &gamma, &noise).unwrap();
        assert!((&next.mean - &state.mean).norm() < 1e-10);
        assert!((&next.cov - &gamma).norm() < 1e-10);
    }
}
