//! Analytic stand-in for a growing CO2 plume: a few Gaussian blobs whose
//! amplitudes grow linearly until a cap, with optional drift and widening.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use super::Point;
use crate::covariance::Grid;
use crate::error::{Error, Result};

const MAX_BLOBS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlob {
    /// Center at `t = 0`.
    pub center: Point,
    /// Center drift per hour.
    #[serde(default = "zero_point")]
    pub velocity: Point,
    /// Amplitude growth per hour.
    pub rate: f64,
    /// Amplitude cap.
    pub cap: f64,
    /// Standard deviations `(wx, wy)` at `t = 0`.
    pub width: [f64; 2],
    /// Width increase per hour, applied to both axes.
    #[serde(default)]
    pub widening: f64,
}

fn zero_point() -> Point {
    Point::new(0.0, 0.0)
}

impl GaussianBlob {
    pub fn amplitude(&self, t: f64) -> f64 {
        (self.rate * t.max(0.0)).min(self.cap)
    }

    pub fn center_at(&self, t: f64) -> Point {
        Point::new(
            self.center.x + self.velocity.x * t,
            self.center.y + self.velocity.y * t,
        )
    }

    pub fn widths_at(&self, t: f64) -> [f64; 2] {
        [
            self.width[0] + self.widening * t,
            self.width[1] + self.widening * t,
        ]
    }

    pub fn eval_point(&self, x: f64, y: f64, t: f64) -> f64 {
        let c = self.center_at(t);
        let [wx, wy] = self.widths_at(t);
        let gx = (-(x - c.x).powi(2) / (2.0 * wx * wx)).exp();
        let gy = (-(y - c.y).powi(2) / (2.0 * wy * wy)).exp();
        self.amplitude(t) * gx * gy
    }
}

/// `int_a^b exp(-(x - c)^2 / (2 w^2)) dx`, evaluated with erf or erfc
/// depending on the side so far tails keep their relative accuracy.
fn gauss_interval(a: f64, b: f64, c: f64, w: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * w;
    let (za, zb) = ((a - c) / s, (b - c) / s);
    let diff = if za >= 0.0 {
        erfc(za) - erfc(zb)
    } else if zb <= 0.0 {
        erfc(-zb) - erfc(-za)
    } else {
        erf(zb) - erf(za)
    };
    (w * (std::f64::consts::PI / 2.0).sqrt() * diff).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlumeModel {
    pub blobs: Vec<GaussianBlob>,
    /// Upper bound on the slowness perturbation anywhere.
    pub max_perturbation: f64,
}

impl PlumeModel {
    /// Injection-point blob that widens in place plus a smaller buoyant
    /// lobe drifting upward, scaled to the grid's extents.
    pub fn default_for(grid: &Grid) -> Self {
        let (lx, ly) = (grid.lx, grid.ly);
        let injection = Point::new(0.5 * lx, 0.65 * ly);
        PlumeModel {
            blobs: vec![
                GaussianBlob {
                    center: injection,
                    velocity: zero_point(),
                    rate: 0.02 / 36.0,
                    cap: 0.02,
                    width: [0.05 * lx, 0.04 * ly],
                    widening: 0.001 * lx.min(ly),
                },
                GaussianBlob {
                    center: injection,
                    velocity: Point::new(0.0005 * lx, -0.003 * ly),
                    rate: 0.008 / 48.0,
                    cap: 0.008,
                    width: [0.08 * lx, 0.04 * ly],
                    widening: 0.0005 * lx.min(ly),
                },
            ],
            max_perturbation: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blobs.len() > MAX_BLOBS {
            return Err(Error::InvalidParameter(format!(
                "plume supports at most {MAX_BLOBS} blobs, got {}",
                self.blobs.len()
            )));
        }
        if !(self.max_perturbation.is_finite() && self.max_perturbation >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "plume max_perturbation must be finite and nonnegative, got {}",
                self.max_perturbation
            )));
        }
        let mut total_cap = 0.0;
        for (i, b) in self.blobs.iter().enumerate() {
            let ok = b.rate >= 0.0
                && b.cap >= 0.0
                && b.width[0] > 0.0
                && b.width[1] > 0.0
                && b.widening >= 0.0
                && [
                    b.center.x,
                    b.center.y,
                    b.velocity.x,
                    b.velocity.y,
                    b.rate,
                    b.cap,
                    b.width[0],
                    b.width[1],
                    b.widening,
                ]
                .iter()
                .all(|v| v.is_finite());
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "plume blob {i} needs nonnegative rate/cap/widening and positive widths"
                )));
            }
            total_cap += b.cap;
        }
        if total_cap > self.max_perturbation {
            return Err(Error::InvalidParameter(format!(
                "plume caps sum to {total_cap}, above max_perturbation {}",
                self.max_perturbation
            )));
        }
        Ok(())
    }

    pub fn eval_point(&self, x: f64, y: f64, t: f64) -> f64 {
        self.blobs.iter().map(|b| b.eval_point(x, y, t)).sum()
    }

    /// Slowness perturbation at time `t` (hours), as exact cell averages.
    pub fn synthesize(&self, grid: &Grid, t: f64) -> Result<DVector<f64>> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "plume time must be nonnegative, got {t}"
            )));
        }
        self.validate()?;
        let (dx, dy) = (grid.dx(), grid.dy());
        let area = grid.cell_area();
        let mut field = DVector::zeros(grid.len());
        for b in &self.blobs {
            let a = b.amplitude(t);
            if a == 0.0 {
                continue;
            }
            let c = b.center_at(t);
            let [wx, wy] = b.widths_at(t);
            let gx: Vec<f64> = (0..grid.nx)
                .map(|ix| gauss_interval(ix as f64 * dx, (ix + 1) as f64 * dx, c.x, wx))
                .collect();
            let gy: Vec<f64> = (0..grid.ny)
                .map(|iy| gauss_interval(iy as f64 * dy, (iy + 1) as f64 * dy, c.y, wy))
                .collect();
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    field[grid.index(ix, iy)] += a * gx[ix] * gy[iy] / area;
                }
            }
        }
        Ok(field)
    }
}
