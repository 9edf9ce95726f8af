use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::LowRankState;
use crate::covariance::CovarianceOperator;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};
use crate::lowrank::{randomized_ghep, GepResult, GhepOptions};
use crate::noise::DiagonalNoise;
use crate::tomography::{MeasurementOperator, NormalOperator};

/// Everything the constant-operator filter precomputes before the first
/// observation arrives.
#[derive(Debug, Clone)]
pub struct FkfModel {
    pub gep: GepResult,
    basis: Arc<DMatrix<f64>>,
    dual: Arc<DMatrix<f64>>,
    /// `Gamma H^T`, `n_s x n_m`.
    pub gamma_ht: DMatrix<f64>,
    /// `H U`, `n_m x k`.
    pub hu: DMatrix<f64>,
    /// `H Gamma H^T`, `n_m x n_m`.
    pub h_gamma_ht: DMatrix<f64>,
}

impl FkfModel {
    pub fn rank(&self) -> usize {
        self.gep.rank()
    }
}

/// Offline stage: generalized eigenpairs of `H^T R^{-1} H` against
/// `Gamma^{-1}` and the cross-covariance `Gamma H^T`.
pub fn fkf_init(
    cov: &CovarianceOperator,
    h: &MeasurementOperator,
    noise: &DiagonalNoise,
    opts: &GhepOptions,
) -> Result<FkfModel> {
    if h.ncols() != cov.len() {
        return Err(Error::dim("fkf operator columns", cov.len(), h.ncols()));
    }
    if noise.len() != h.nrows() {
        return Err(Error::dim("fkf noise length", h.nrows(), noise.len()));
    }
    let gep = randomized_ghep(&NormalOperator { h, noise }, cov, opts)?;
    let gamma_ht = cov.apply_many(&h.transpose_dense())?;
    let mut h_gamma_ht = h.apply_mat(&gamma_ht)?;
    symmetrize(&mut h_gamma_ht);
    let hu = h.apply_mat(&gep.basis)?;
    Ok(FkfModel {
        basis: Arc::new(gep.basis.clone()),
        dual: Arc::new(gep.dual.clone()),
        gep,
        gamma_ht,
        hu,
        h_gamma_ht,
    })
}

/// Per-mode diagonal update after `alpha` has been advanced.
pub fn update_diagonal(d: f64, lambda: f64, alpha: f64) -> f64 {
    let gap = alpha - d;
    (d + alpha * lambda * gap) / (1.0 + lambda * gap)
}

/// One assimilation step with a constant measurement operator. Cost is
/// linear in the state size.
pub fn fkf_step(
    state: &LowRankState,
    model: &FkfModel,
    h: &MeasurementOperator,
    y: &DVector<f64>,
    noise: &DiagonalNoise,
) -> Result<LowRankState> {
    let n = state.len();
    let k = model.rank();
    if model.gamma_ht.nrows() != n {
        return Err(Error::dim("fkf state length", model.gamma_ht.nrows(), n));
    }
    if y.len() != h.nrows() || noise.len() != h.nrows() {
        return Err(Error::dim("fkf observations", h.nrows(), y.len()));
    }
    let d = match state.rank() {
        0 => DVector::zeros(k),
        r if r == k => state.d.clone(),
        r => {
            return Err(Error::dim(
                "fkf state rank (must equal the eigenbasis)",
                k,
                r,
            ));
        }
    };
    let alpha = state.alpha + 1.0;

    // S = H Sigma_pred H^T + R with Sigma_pred = alpha Gamma - U D U^T
    let mut hud = model.hu.clone();
    for (j, dj) in d.iter().enumerate() {
        hud.column_mut(j).scale_mut(*dj);
    }
    let mut s = &model.h_gamma_ht * alpha;
    s.gemm(-1.0, &hud, &model.hu.transpose(), 1.0);
    noise.add_to(&mut s);
    let chol = cholesky(&s, "innovation covariance")?;
    let z = chol.solve(&(y - h.apply(&state.mean)?));

    // mean += (alpha Gamma H^T - U D (H U)^T) z
    let coeff = hud.tr_mul(&z);
    let mut mean = state.mean.clone();
    mean.gemv(alpha, &model.gamma_ht, &z, 1.0);
    mean.gemv(-1.0, &*model.basis, &coeff, 1.0);

    let d_next = DVector::from_iterator(
        k,
        d.iter()
            .zip(model.gep.eigenvalues.iter())
            .map(|(&dj, &lj)| update_diagonal(dj, lj, alpha)),
    );
    Ok(LowRankState {
        alpha,
        d: d_next,
        w: Arc::clone(&model.basis),
        w_dual: Arc::clone(&model.dual),
        mean,
        step: state.step + 1,
    })
}
