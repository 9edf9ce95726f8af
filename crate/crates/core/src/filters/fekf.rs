use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BoxCox, LowRankState};
use crate::covariance::CovarianceOperator;
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::lowrank::{
    add_low_rank, randomized_ghep, GhepOptions, LowRankSym, DEFAULT_OVERSAMPLING,
};
use crate::noise::DiagonalNoise;
use crate::tomography::{MeasurementOperator, NormalOperator};

pub const DEFAULT_TRUNC_TOL: f64 = 1e-5;
pub const MAX_RELINEARIZATIONS: usize = 5;
const RELINEARIZATION_STOP: f64 = 1e-6;
/// Summed-mode values below this fraction of the largest are discarded
/// before the diagonal is inverted.
const DHAT_DROP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FekfOptions {
    /// Eigenpairs per step; `None` uses the number of measurements.
    pub rank: Option<usize>,
    pub oversampling: usize,
    pub trunc_tol: f64,
    pub relinearizations: usize,
    pub seed: u64,
}

impl Default for FekfOptions {
    fn default() -> Self {
        FekfOptions {
            rank: None,
            oversampling: DEFAULT_OVERSAMPLING,
            trunc_tol: DEFAULT_TRUNC_TOL,
            relinearizations: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FekfDiagnostics {
    pub rank_before_truncation: usize,
    pub rank_after_truncation: usize,
    pub gep_rank: usize,
    pub linearizations: usize,
}

/// `H diag(ds/dx)` and `h(x) = H s(x)` at the transformed state `x`.
pub fn ekf_linearize(
    h: &MeasurementOperator,
    mean: &DVector<f64>,
    transform: &BoxCox,
) -> Result<(MeasurementOperator, DVector<f64>)> {
    let slope = transform.derivative(mean)?;
    let hk = h.scale_columns(&slope)?;
    let predicted = h.apply(&transform.inverse(mean)?)?;
    Ok((hk, predicted))
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One step of the extended filter: the measurement operator is
/// relinearized around the current estimate and the low-rank factor is
/// rebuilt from the previous basis plus the new eigenpairs.
pub fn fekf_step(
    state: &LowRankState,
    cov: &CovarianceOperator,
    h: &MeasurementOperator,
    y: &DVector<f64>,
    noise: &DiagonalNoise,
    transform: &BoxCox,
    opts: &FekfOptions,
) -> Result<(LowRankState, FekfDiagnostics)> {
    let n = state.len();
    if cov.len() != n || h.ncols() != n {
        return Err(Error::dim("fekf state length", cov.len(), n));
    }
    if y.len() != h.nrows() || noise.len() != h.nrows() {
        return Err(Error::dim("fekf observations", h.nrows(), y.len()));
    }
    if !(1..=MAX_RELINEARIZATIONS).contains(&opts.relinearizations) {
        return Err(Error::InvalidParameter(format!(
            "relinearizations must lie in 1..={MAX_RELINEARIZATIONS}, got {}",
            opts.relinearizations
        )));
    }
    if !(opts.trunc_tol >= 0.0 && opts.trunc_tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation tolerance must lie in [0, 1), got {}",
            opts.trunc_tol
        )));
    }
    let alpha = state.alpha + 1.0;
    let w = &*state.w;
    let d = &state.d;

    // iterated linearization; a single pass is the plain extended filter
    let mut point = state.mean.clone();
    let mut hk = h.clone();
    let mut mean = state.mean.clone();
    let mut used = 0;
    for _ in 0..opts.relinearizations {
        let (lin, predicted) = ekf_linearize(h, &point, transform)?;
        hk = lin;
        used += 1;

        // F = Sigma_pred H_k^T = alpha Gamma H_k^T - W D (H_k W)^T
        let mut f = cov.apply_many(&hk.transpose_dense())?;
        f *= alpha;
        if state.rank() > 0 {
            let mut hkw_d = hk.apply_mat(w)?;
            for (j, dj) in d.iter().enumerate() {
                hkw_d.column_mut(j).scale_mut(*dj);
            }
            f.gemm(-1.0, w, &hkw_d.transpose(), 1.0);
        }
        let mut s = hk.apply_mat(&f)?;
        noise.add_to(&mut s);
        let chol = cholesky(&s, "innovation covariance")?;
        let innovation = y - predicted - hk.apply(&(&state.mean - &point))?;
        let next = &state.mean + f * chol.solve(&innovation);

        let change = (&next - &point).norm();
        let scale = next.norm();
        mean = next;
        if change <= RELINEARIZATION_STOP * scale {
            break;
        }
        point = mean.clone();
    }

    let m = h.nrows();
    let rank = opts.rank.unwrap_or(m).min(n);
    let ghep_opts = GhepOptions {
        rank,
        oversampling: opts.oversampling.min(n - rank),
        seed: step_seed(opts.seed, state.step),
        ..GhepOptions::new(rank, 0)
    };
    let gep = randomized_ghep(&NormalOperator { h: &hk, noise }, cov, &ghep_opts)?;

    // Sigma_pred^{-1} = Gamma^{-1}/alpha + Gamma^{-1} W Dbar W^T Gamma^{-1};
    // the sum is formed on the dual bases Gamma^{-1} W, Gamma^{-1} U, which
    // are orthonormal in the Gamma inner product
    let dbar = d.map(|dj| dj / (alpha * (alpha - dj)));
    let base = LowRankSym::from_parts((*state.w_dual).clone(), w.clone(), dbar)?;
    let summed = add_low_rank(&base, &gep.dual, &gep.eigenvalues, cov, opts.trunc_tol)?;
    let rank_before = state.rank() + gep.rank();

    let dmax = summed.d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let keep: Vec<usize> = (0..summed.rank())
        .filter(|&j| summed.d[j].abs() >= DHAT_DROP * dmax && dmax > 0.0)
        .collect();
    let d_next = DVector::from_iterator(
        keep.len(),
        keep.iter().map(|&j| {
            let dh = summed.d[j];
            alpha * alpha * dh / (1.0 + alpha * dh)
        }),
    );
    let next = LowRankState {
        alpha,
        d: d_next,
        w: Arc::new(summed.bw.select_columns(&keep)),
        w_dual: Arc::new(summed.w.select_columns(&keep)),
        mean,
        step: state.step + 1,
    };
    let diag = FekfDiagnostics {
        rank_before_truncation: rank_before,
        rank_after_truncation: next.rank(),
        gep_rank: gep.rank(),
        linearizations: used,
    };
    Ok((next, diag))
}

/// Empty dual basis for a zero initial covariance.
pub(crate) fn empty_basis(n: usize) -> Arc<DMatrix<f64>> {
    Arc::new(DMatrix::zeros(n, 0))
}
