//! Stationary isotropic covariance kernels.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `theta * exp(-(r/l)^p)`
    PoweredExponential,
    /// Matérn with smoothness `nu` and scale `alpha_scale`.
    Matern,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Variance scale, `kappa(0) = theta`.
    pub theta: f64,
    /// Correlation length.
    pub length: f64,
    /// Exponent of the powered-exponential family.
    #[serde(default = "default_power")]
    pub power: f64,
    /// Matérn smoothness.
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Matérn scaling; `None` means `1 / length`, which makes `nu = 1/2`
    /// coincide with the `p = 1` exponential kernel.
    #[serde(default)]
    pub alpha_scale: Option<f64>,
}

fn default_power() -> f64 {
    1.0
}

fn default_nu() -> f64 {
    0.5
}

impl KernelSpec {
    pub fn powered_exponential(theta: f64, length: f64, power: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::PoweredExponential,
            theta,
            length,
            power,
            nu: default_nu(),
            alpha_scale: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn matern(theta: f64, length: f64, nu: f64, alpha_scale: Option<f64>) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Matern,
            theta,
            length,
            power: default_power(),
            nu,
            alpha_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "kernel {what} = {v} is out of range"
            )))
        };
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return bad("theta", self.theta);
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return bad("length", self.length);
        }
        match self.family {
            KernelFamily::PoweredExponential => {
                if !(self.power > 0.0 && self.power <= 2.0) {
                    return bad("power", self.power);
                }
            }
            KernelFamily::Matern => {
                if !(self.nu.is_finite() && self.nu > 0.0) {
                    return bad("nu", self.nu);
                }
                if let Some(a) = self.alpha_scale {
                    if !(a.is_finite() && a > 0.0) {
                        return bad("alpha_scale", a);
                    }
                }
            }
        }
        Ok(())
    }

    fn matern_scale(&self) -> f64 {
        self.alpha_scale.unwrap_or(1.0 / self.length)
    }

    /// Covariance at distance `r >= 0`.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return self.theta;
        }
        match self.family {
            KernelFamily::PoweredExponential => {
                self.theta * (-(r / self.length).powf(self.power)).exp()
            }
            KernelFamily::Matern => {
                let z = (2.0 * self.nu).sqrt() * self.matern_scale() * r;
                self.theta * matern_correlation(self.nu, z)
            }
        }
    }

    pub fn describe(&self) -> String {
        match self.family {
            KernelFamily::PoweredExponential => format!(
                "powered_exponential(theta={}, length={}, power={})",
                self.theta, self.length, self.power
            ),
            KernelFamily::Matern => format!(
                "matern(theta={}, length={}, nu={}, alpha_scale={})",
                self.theta,
                self.length,
                self.nu,
                self.matern_scale()
            ),
        }
    }
}

/// `2^(1-nu) / Gamma(nu) * z^nu * K_nu(z)`, equal to 1 at `z = 0`.
fn matern_correlation(nu: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    // closed forms for the common half-integer orders
    if nu == 0.5 {
        return (-z).exp();
    }
    if nu == 1.5 {
        return (1.0 + z) * (-z).exp();
    }
    if nu == 2.5 {
        return (1.0 + z + z * z / 3.0) * (-z).exp();
    }
    let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - gamma(nu).ln();
    let scaled = bessel_k_scaled(nu, z);
    (log_pref + nu * z.ln() - z).exp() * scaled
}

/// Exponentially scaled modified Bessel function of the second kind,
/// `exp(z) * K_nu(z)` for `z > 0`, from the integral representation
/// `K_nu(z) = int_0^inf exp(-z cosh t) cosh(nu t) dt`.
///
/// The integrand is analytic in the strip `|Im t| < pi/2` and decays
/// double-exponentially, so the trapezoid rule converges geometrically.
pub(crate) fn bessel_k_scaled(nu: f64, z: f64) -> f64 {
    const H: f64 = 0.02;
    let f = |t: f64| (-z * (t.cosh() - 1.0) + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
    let mut sum = 0.5 * f(0.0);
    let mut k = 1usize;
    loop {
        let t = k as f64 * H;
        let v = f(t);
        sum += v;
        // past the maximum of the integrand and negligible
        if t > 1.0 && v < 1e-18 * sum && z * t.sinh() > nu {
            break;
        }
        if k > 200_000 {
            break;
        }
        k += 1;
    }
    sum * H
}
