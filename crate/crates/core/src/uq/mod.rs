//! Variance, total variance, relative entropy, and conditional sampling
//! read off a low-rank filter state.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{CovarianceOperator, RootDirection};
use crate::error::{Error, Result};
use crate::filters::LowRankState;

fn check_len(state: &LowRankState, cov: &CovarianceOperator) -> Result<()> {
    if state.len() != cov.len() {
        return Err(Error::dim(
            "state length vs covariance",
            cov.len(),
            state.len(),
        ));
    }
    Ok(())
}

/// Pointwise variance `alpha diag(Gamma) - sum_j d_j W_j^2`.
pub fn variance(state: &LowRankState, cov: &CovarianceOperator) -> Result<DVector<f64>> {
    check_len(state, cov)?;
    let mut out = cov.diagonal() * state.alpha;
    for (j, dj) in state.d.iter().enumerate() {
        let col = state.w.column(j);
        for (o, wij) in out.iter_mut().zip(col.iter()) {
            *o -= dj * wij * wij;
        }
    }
    Ok(out)
}

/// Total variance `trace(Sigma)`. The columns of `W` are not unit vectors,
/// so Euclidean column norms enter.
pub fn trace_criterion(state: &LowRankState, cov: &CovarianceOperator) -> Result<f64> {
    check_len(state, cov)?;
    let low: f64 = state
        .d
        .iter()
        .enumerate()
        .map(|(j, dj)| dj * state.w.column(j).norm_squared())
        .sum();
    Ok(state.alpha * cov.trace() - low)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeEntropy {
    /// `1/2 (log det Sigma - log det Gamma)`.
    pub exact: f64,
    /// `1/2 sum_i ln(alpha - d_i)`, which drops the `(n - r) ln alpha` term.
    pub reduced: f64,
}

pub fn relative_entropy(state: &LowRankState) -> Result<RelativeEntropy> {
    if !(state.alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "relative entropy needs alpha > 0, got {}",
            state.alpha
        )));
    }
    let mut sum = 0.0;
    for (index, &d) in state.d.iter().enumerate() {
        if !(d < state.alpha) {
            return Err(Error::Domain { index, value: d });
        }
        sum += (state.alpha - d).ln();
    }
    let free = (state.len() - state.rank()) as f64;
    Ok(RelativeEntropy {
        exact: 0.5 * (free * state.alpha.ln() + sum),
        reduced: 0.5 * sum,
    })
}

/// `L = sqrt(alpha) (Gamma^{1/2} - W S W^T Gamma^{-1/2})` with
/// `S = I - (I - D/alpha)^{1/2}`, so that `L L^T = alpha Gamma - W D W^T`.
#[derive(Debug, Clone)]
pub struct SquareRootFactor<'a> {
    state: &'a LowRankState,
    sigma: DVector<f64>,
}

impl<'a> SquareRootFactor<'a> {
    pub fn new(state: &'a LowRankState) -> Result<Self> {
        if state.alpha == 0.0 && state.rank() == 0 {
            return Ok(SquareRootFactor {
                state,
                sigma: DVector::zeros(0),
            });
        }
        state.validate()?;
        let sigma = state.d.map(|d| 1.0 - (1.0 - d / state.alpha).sqrt());
        Ok(SquareRootFactor { state, sigma })
    }

    /// Diagonal of `S`, each in `[0, 1]`.
    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// `L x` given `Gamma^{1/2} x` and `Gamma^{-1/2} x`.
    pub fn apply_with_roots(
        &self,
        sqrt_x: &DVector<f64>,
        inv_sqrt_x: &DVector<f64>,
    ) -> DVector<f64> {
        let mut out = sqrt_x.clone();
        if self.state.rank() > 0 {
            let coeff = self.state.w.tr_mul(inv_sqrt_x).component_mul(&self.sigma);
            out.gemv(-1.0, &*self.state.w, &coeff, 1.0);
        }
        out * self.state.alpha.sqrt()
    }

    /// Dense `L`, for checks at small sizes.
    pub fn to_dense(&self, cov: &CovarianceOperator) -> Result<DMatrix<f64>> {
        check_len(self.state, cov)?;
        let root = cov.root_matrix(RootDirection::Sqrt)?;
        let inv_root = cov.root_matrix(RootDirection::InvSqrt)?;
        let mut ws = (*self.state.w).clone();
        for (j, s) in self.sigma.iter().enumerate() {
            ws.column_mut(j).scale_mut(*s);
        }
        let correction = ws * self.state.w.transpose() * inv_root;
        Ok((root - correction) * self.state.alpha.sqrt())
    }
}

/// `mean + L s_u`; needs square-root applications, so dense mode only.
pub fn conditional_sample(
    state: &LowRankState,
    cov: &CovarianceOperator,
    s_u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len(state, cov)?;
    if s_u.len() != state.len() {
        return Err(Error::dim("standard normal input", state.len(), s_u.len()));
    }
    let factor = SquareRootFactor::new(state)?;
    let z1 = cov.root_apply(s_u, RootDirection::Sqrt)?;
    let z2 = cov.root_apply(s_u, RootDirection::InvSqrt)?;
    Ok(&state.mean + factor.apply_with_roots(&z1, &z2))
}

/// One fixed standard-normal input carried through a sequence of states;
/// the square-root work happens once, in [`RealizationPropagator::new`].
#[derive(Debug, Clone)]
pub struct RealizationPropagator {
    z1: DVector<f64>,
    z2: DVector<f64>,
}

impl RealizationPropagator {
    pub fn new(cov: &CovarianceOperator, s_u: &DVector<f64>) -> Result<Self> {
        if s_u.len() != cov.len() {
            return Err(Error::dim("standard normal input", cov.len(), s_u.len()));
        }
        Ok(RealizationPropagator {
            z1: cov.root_apply(s_u, RootDirection::Sqrt)?,
            z2: cov.root_apply(s_u, RootDirection::InvSqrt)?,
        })
    }

    pub fn realize(&self, state: &LowRankState) -> Result<DVector<f64>> {
        if state.len() != self.z1.len() {
            return Err(Error::dim("state length", self.z1.len(), state.len()));
        }
        let factor = SquareRootFactor::new(state)?;
        Ok(&state.mean + factor.apply_with_roots(&self.z1, &self.z2))
    }
}

pub fn propagate_realization(
    s_u: &DVector<f64>,
    states: &[LowRankState],
    cov: &CovarianceOperator,
) -> Result<Vec<DVector<f64>>> {
    let prop = RealizationPropagator::new(cov, s_u)?;
    states.iter().map(|s| prop.realize(s)).collect()
}
