use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    Forward,
    Inverse,
    Derivative,
}

/// Power transform `x = a (s^{1/a} - 1)` mapping positive physical values
/// to an unconstrained estimation variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCox {
    pub alpha: f64,
}

impl BoxCox {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Box-Cox parameter must be positive and finite, got {alpha}"
            )));
        }
        Ok(BoxCox { alpha })
    }

    pub fn apply(&self, x: &DVector<f64>, mode: TransformMode) -> Result<DVector<f64>> {
        match mode {
            TransformMode::Forward => self.forward(x),
            TransformMode::Inverse => self.inverse(x),
            TransformMode::Derivative => self.derivative(x),
        }
    }

    /// Physical -> transformed.
    pub fn forward(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        let a = self.alpha;
        map_checked(s, |v| v > 0.0, |v| a * (v.powf(1.0 / a) - 1.0))
    }

    /// Transformed -> physical.
    pub fn inverse(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let a = self.alpha;
        map_checked(x, |v| (v + a) / a > 0.0, |v| ((v + a) / a).powf(a))
    }

    /// `ds/dx` at transformed values `x`.
    pub fn derivative(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let a = self.alpha;
        map_checked(x, |v| (v + a) / a > 0.0, |v| ((v + a) / a).powf(a - 1.0))
    }
}

fn map_checked(
    x: &DVector<f64>,
    valid: impl Fn(f64) -> bool,
    f: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    if let Some((index, &value)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && valid(**v)))
    {
        return Err(Error::Domain { index, value });
    }
    Ok(x.map(f))
}
