use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceOperator;
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::noise::DiagonalNoise;
use crate::tomography::MeasurementOperator;

pub const DEFAULT_ENSEMBLE_SIZE: usize = 1000;

/// Realizations stored as columns.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InvalidParameter(format!(
                "an ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        Ok(Ensemble { members })
    }

    /// Every member at zero, matching a zero initial covariance.
    pub fn zeros(n: usize, size: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n, size))
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn state_len(&self) -> usize {
        self.members.nrows()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.column_mean()
    }

    pub fn anomalies(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut a = self.members.clone();
        for mut c in a.column_iter_mut() {
            c -= &mean;
        }
        a
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let a = self.anomalies();
        (&a * a.transpose()) / (self.size() as f64 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnkfOptions {
    /// Multiplier on forecast anomalies; 1 disables inflation.
    pub inflation: f64,
}

impl Default for EnkfOptions {
    fn default() -> Self {
        EnkfOptions { inflation: 1.0 }
    }
}

/// Perturbed-observation ensemble update. Randomness for step `k` comes
/// from stream `k` of a generator keyed by `seed`.
#[allow(clippy::too_many_arguments)]
pub fn enkf_step(
    ensemble: &Ensemble,
    h: &MeasurementOperator,
    y: &DVector<f64>,
    cov: &CovarianceOperator,
    noise: &DiagonalNoise,
    seed: u64,
    step: usize,
    opts: &EnkfOptions,
) -> Result<Ensemble> {
    let n = ensemble.state_len();
    let size = ensemble.size();
    if cov.len() != n || h.ncols() != n {
        return Err(Error::dim("enkf state length", cov.len(), n));
    }
    if y.len() != h.nrows() || noise.len() != h.nrows() {
        return Err(Error::dim("enkf observations", h.nrows(), y.len()));
    }
    if !(opts.inflation >= 1.0 && opts.inflation.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inflation must be at least 1, got {}",
            opts.inflation
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);

    let mut forecast = ensemble.members() + cov.sample(&mut rng, size)?;
    if opts.inflation != 1.0 {
        let mean = forecast.column_mean();
        for mut c in forecast.column_iter_mut() {
            let anomaly = (&c - &mean) * opts.inflation;
            c.copy_from(&(&mean + anomaly));
        }
    }
    let forecast = Ensemble::new(forecast)?;

    let hx = h.apply_mat(forecast.members())?;
    let hx_mean = hx.column_mean();
    let mut hx_anom = hx.clone();
    for mut c in hx_anom.column_iter_mut() {
        c -= &hx_mean;
    }
    let x_anom = forecast.anomalies();
    let scale = 1.0 / (size as f64 - 1.0);
    let mut pyy = (&hx_anom * hx_anom.transpose()) * scale;
    noise.add_to(&mut pyy);
    let pxy = (&x_anom * hx_anom.transpose()) * scale;

    let sd = noise.variances().map(f64::sqrt);
    let mut innovations = -hx;
    for mut c in innovations.column_iter_mut() {
        c += y;
        for (i, v) in c.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *v += sd[i] * e;
        }
    }
    let chol = cholesky(&pyy, "ensemble innovation covariance")?;
    let members = forecast.members() + pxy * chol.solve(&innovations);
    Ensemble::new(members)
}
