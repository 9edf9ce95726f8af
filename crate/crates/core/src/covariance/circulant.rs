//! Block-circulant embedding of a stationary covariance on a regular grid.
//!
//! The `nx * ny` block-Toeplitz covariance is embedded in an `mx * my`
//! block-circulant matrix whose eigenvalues are the 2-D DFT of its first
//! column. A matvec is then zero-pad, FFT, scale, inverse FFT, restrict.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Grid, KernelSpec};
use crate::error::{Error, Result};

/// Spectrum values below `-NEG_TOL * max` mean the embedding is indefinite.
const NEG_TOL: f64 = 1e-10;
/// Padding is doubled at most this many times per axis (8x the minimum).
const MAX_DOUBLINGS: u32 = 3;

pub(crate) struct CirculantEmbedding {
    nx: usize,
    ny: usize,
    mx: usize,
    my: usize,
    /// Eigenvalues of the embedding, stored transposed: `spectrum[kx * my + ky]`.
    spectrum: Vec<f64>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    min_eig: f64,
    max_eig: f64,
}

impl std::fmt::Debug for CirculantEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantEmbedding")
            .field("grid", &(self.nx, self.ny))
            .field("padded", &(self.mx, self.my))
            .field("min_eig", &self.min_eig)
            .field("max_eig", &self.max_eig)
            .finish()
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3, 5 and 7.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl CirculantEmbedding {
    pub(crate) fn new(grid: &Grid, spec: &KernelSpec) -> Result<Self> {
        let base_x = smooth_size(2 * grid.nx - 1);
        let base_y = smooth_size(2 * grid.ny - 1);
        let mut last = None;
        for doubling in 0..=MAX_DOUBLINGS {
            let mx = base_x << doubling;
            let my = base_y << doubling;
            let emb = Self::with_padding(grid, spec, mx, my);
            if emb.min_eig >= -NEG_TOL * emb.max_eig {
                if doubling > 0 {
                    log::info!(
                        "circulant embedding for {} needed padding {}x{}",
                        spec.describe(),
                        mx,
                        my
                    );
                }
                return Ok(emb);
            }
            last = Some((emb.min_eig, emb.max_eig, mx, my));
        }
        let (min, max, mx, my) = last.expect("at least one padding attempt");
        Err(Error::EmbeddingNotNonnegative {
            kernel: spec.describe(),
            min,
            max,
            mx,
            my,
        })
    }

    fn with_padding(grid: &Grid, spec: &KernelSpec, mx: usize, my: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(mx);
        let inv_x = planner.plan_fft_inverse(mx);
        let fwd_y = planner.plan_fft_forward(my);
        let inv_y = planner.plan_fft_inverse(my);
        let (dx, dy) = (grid.dx(), grid.dy());

        // first column of the embedding, row-major over (iy, ix)
        let mut rows = vec![Complex64::new(0.0, 0.0); mx * my];
        for iy in 0..my {
            let oy = iy.min(my - iy) as f64 * dy;
            for ix in 0..mx {
                let ox = ix.min(mx - ix) as f64 * dx;
                rows[iy * mx + ix] = Complex64::new(spec.eval(ox.hypot(oy)), 0.0);
            }
        }
        let mut emb = CirculantEmbedding {
            nx: grid.nx,
            ny: grid.ny,
            mx,
            my,
            spectrum: Vec::new(),
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
            min_eig: 0.0,
            max_eig: 0.0,
        };
        let cols = emb.forward(rows, my);
        emb.spectrum = cols.iter().map(|c| c.re).collect();
        emb.min_eig = emb.spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
        emb.max_eig = emb
            .spectrum
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        emb
    }

    pub(crate) fn padded_shape(&self) -> (usize, usize) {
        (self.mx, self.my)
    }

    pub(crate) fn spectrum_range(&self) -> (f64, f64) {
        (self.min_eig, self.max_eig)
    }

    /// Forward 2-D FFT of a row-major `my x mx` buffer whose first
    /// `active_rows` rows may be nonzero. Returns the transposed spectrum.
    fn forward(&self, mut rows: Vec<Complex64>, active_rows: usize) -> Vec<Complex64> {
        let (mx, my) = (self.mx, self.my);
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fwd_x.get_inplace_scratch_len()];
        for r in rows.chunks_exact_mut(mx).take(active_rows) {
            self.fwd_x.process_with_scratch(r, &mut scratch);
        }
        let mut cols = vec![Complex64::new(0.0, 0.0); mx * my];
        for iy in 0..active_rows {
            for kx in 0..mx {
                cols[kx * my + iy] = rows[iy * mx + kx];
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fwd_y.get_inplace_scratch_len()];
        for c in cols.chunks_exact_mut(my) {
            self.fwd_y.process_with_scratch(c, &mut scratch);
        }
        cols
    }

    /// Applies the embedded operator to `re + i*im` (both length `nx*ny`)
    /// and returns `(Gamma re, Gamma im)`.
    fn apply_pair(&self, re: &[f64], im: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny, mx, my) = (self.nx, self.ny, self.mx, self.my);
        let mut rows = vec![Complex64::new(0.0, 0.0); mx * my];
        for iy in 0..ny {
            for ix in 0..nx {
                let k = iy * nx + ix;
                rows[iy * mx + ix] = Complex64::new(re[k], im.map_or(0.0, |v| v[k]));
            }
        }
        let mut cols = self.forward(rows, ny);
        for (c, &s) in cols.iter_mut().zip(&self.spectrum) {
            *c *= s;
        }
        self.inverse_restrict(cols)
    }

    /// Inverse 2-D FFT of a transposed spectrum, restricted to the grid block.
    fn inverse_restrict(&self, mut cols: Vec<Complex64>) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny, mx, my) = (self.nx, self.ny, self.mx, self.my);
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inv_y.get_inplace_scratch_len()];
        for c in cols.chunks_exact_mut(my) {
            self.inv_y.process_with_scratch(c, &mut scratch);
        }
        let mut rows = vec![Complex64::new(0.0, 0.0); mx * ny];
        for iy in 0..ny {
            for kx in 0..mx {
                rows[iy * mx + kx] = cols[kx * my + iy];
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inv_x.get_inplace_scratch_len()];
        for r in rows.chunks_exact_mut(mx) {
            self.inv_x.process_with_scratch(r, &mut scratch);
        }
        let scale = 1.0 / (mx * my) as f64;
        let mut out_re = vec![0.0; nx * ny];
        let mut out_im = vec![0.0; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let v = rows[iy * mx + ix] * scale;
                out_re[iy * nx + ix] = v.re;
                out_im[iy * nx + ix] = v.im;
            }
        }
        (out_re, out_im)
    }

    pub(crate) fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let (re, _) = self.apply_pair(x.as_slice(), None);
        DVector::from_vec(re)
    }

    /// Applies to every column, two real columns per complex transform.
    pub(crate) fn apply_many(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let m = x.ncols();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..m.div_ceil(2))
            .into_par_iter()
            .map(|p| {
                let a = x.column(2 * p);
                let b = (2 * p + 1 < m).then(|| x.column(2 * p + 1));
                self.apply_pair(a.as_slice(), b.as_ref().map(|c| c.as_slice()))
            })
            .collect();
        let mut out = DMatrix::zeros(n, m);
        for (p, (a, b)) in pairs.into_iter().enumerate() {
            out.column_mut(2 * p).copy_from_slice(&a);
            if 2 * p + 1 < m {
                out.column_mut(2 * p + 1).copy_from_slice(&b);
            }
        }
        out
    }

    /// Draws `count` independent `N(0, Gamma)` fields. Each complex transform
    /// of a white spectrum scaled by `sqrt(lambda / M)` yields two samples.
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> DMatrix<f64> {
        let (mx, my) = (self.mx, self.my);
        let total = (mx * my) as f64;
        let amp: Vec<f64> = self
            .spectrum
            .iter()
            .map(|&s| (s.max(0.0) / total).sqrt())
            .collect();
        let n = self.nx * self.ny;
        let mut out = DMatrix::zeros(n, count);
        let mut j = 0;
        while j < count {
            let cols: Vec<Complex64> = amp
                .iter()
                .map(|&a| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(a * re, a * im)
                })
                .collect();
            // inverse_restrict divides by M; the unnormalized inverse is wanted here
            let (re, im) = self.inverse_restrict(cols);
            out.column_mut(j)
                .iter_mut()
                .zip(&re)
                .for_each(|(o, v)| *o = v * total);
            if j + 1 < count {
                out.column_mut(j + 1)
                    .iter_mut()
                    .zip(&im)
                    .for_each(|(o, v)| *o = v * total);
            }
            j += 2;
        }
        out
    }
}
