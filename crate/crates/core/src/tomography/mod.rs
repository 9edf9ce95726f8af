//! Straight-ray cross-well travel-time tomography.
//!
//! Each source-receiver pair contributes one row of the measurement operator
//! `H`; entry `(i, j)` is the length of ray `i` inside cell `j`, so `H s`
//! integrates the slowness `s` along every ray.

mod plume;
mod ray;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use plume::{GaussianBlob, PlumeModel};
pub use ray::{trace_ray, Point};

use crate::covariance::Grid;
use crate::error::{Error, Result};
use crate::linalg::LinearOperator;
use crate::noise::DiagonalNoise;

/// Well positions. `None` places sources on the left boundary and
/// receivers on the right one, spanning the full depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct WellGeometry {
    #[serde(default)]
    pub source_x: Option<f64>,
    #[serde(default)]
    pub receiver_x: Option<f64>,
    /// `[top, bottom]` depth range of the sources.
    #[serde(default)]
    pub source_depths: Option<[f64; 2]>,
    #[serde(default)]
    pub receiver_depths: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReceiverLayout {
    pub sources: Vec<Point>,
    pub receivers: Vec<Point>,
}

fn equispaced(n: usize, x: f64, range: [f64; 2]) -> Vec<Point> {
    let step = (range[1] - range[0]) / n as f64;
    (0..n)
        .map(|j| Point::new(x, range[0] + (j as f64 + 0.5) * step))
        .collect()
}

impl SourceReceiverLayout {
    /// Sources on the left well, receivers on the right, equispaced in depth.
    pub fn crosswell(grid: &Grid, n_sou: usize, n_rec: usize) -> Result<Self> {
        Self::with_geometry(grid, n_sou, n_rec, &WellGeometry::default())
    }

    pub fn with_geometry(
        grid: &Grid,
        n_sou: usize,
        n_rec: usize,
        geometry: &WellGeometry,
    ) -> Result<Self> {
        if n_sou == 0 || n_rec == 0 {
            return Err(Error::InvalidParameter(format!(
                "layout needs at least one source and receiver, got {n_sou}x{n_rec}"
            )));
        }
        let full = [0.0, grid.ly];
        let layout = SourceReceiverLayout {
            sources: equispaced(
                n_sou,
                geometry.source_x.unwrap_or(0.0),
                geometry.source_depths.unwrap_or(full),
            ),
            receivers: equispaced(
                n_rec,
                geometry.receiver_x.unwrap_or(grid.lx),
                geometry.receiver_depths.unwrap_or(full),
            ),
        };
        layout.validate(grid)?;
        Ok(layout)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::InvalidParameter(
                "layout needs at least one source and one receiver".into(),
            ));
        }
        for p in self.sources.iter().chain(&self.receivers) {
            if !grid.contains(p.x, p.y) {
                return Err(Error::OutsideDomain { x: p.x, y: p.y });
            }
        }
        Ok(())
    }

    pub fn n_measurements(&self) -> usize {
        self.sources.len() * self.receivers.len()
    }

    /// Source-receiver pairs in row order (source-major).
    pub fn pairs(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.sources
            .iter()
            .flat_map(move |s| self.receivers.iter().map(move |r| (*s, *r)))
    }
}

/// Sparse `n_m x n_s` operator in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl MeasurementOperator {
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                if c >= n_cols {
                    return Err(Error::dim("measurement operator column", n_cols, c));
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(MeasurementOperator {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(m.ncols(), rows).expect("columns are in range")
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self::from_rows(n_cols, vec![Vec::new(); n_rows]).expect("empty rows")
    }

    pub fn nrows(&self) -> usize {
        self.n_rows
    }

    pub fn ncols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// `H x`
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::dim("H apply", self.n_cols, x.len()));
        }
        Ok(DVector::from_iterator(
            self.n_rows,
            (0..self.n_rows).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()),
        ))
    }

    /// `H^T y`
    pub fn apply_transpose(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n_rows {
            return Err(Error::dim("H^T apply", self.n_rows, y.len()));
        }
        let mut out = DVector::zeros(self.n_cols);
        for i in 0..self.n_rows {
            let yi = y[i];
            for (c, v) in self.row(i) {
                out[c] += v * yi;
            }
        }
        Ok(out)
    }

    /// `H X` for a dense `n_s x k` block.
    pub fn apply_mat(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n_cols {
            return Err(Error::dim("H apply", self.n_cols, x.nrows()));
        }
        let k = x.ncols();
        let mut out = DMatrix::zeros(self.n_rows, k);
        for j in 0..k {
            let col = x.column(j);
            for i in 0..self.n_rows {
                out[(i, j)] = self.row(i).map(|(c, v)| v * col[c]).sum();
            }
        }
        Ok(out)
    }

    /// `H^T Y` for a dense `n_m x k` block.
    pub fn apply_transpose_mat(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.n_rows {
            return Err(Error::dim("H^T apply", self.n_rows, y.nrows()));
        }
        let k = y.ncols();
        let mut out = DMatrix::zeros(self.n_cols, k);
        for j in 0..k {
            let mut col = out.column_mut(j);
            for i in 0..self.n_rows {
                let yi = y[(i, j)];
                for (c, v) in self.row(i) {
                    col[c] += v * yi;
                }
            }
        }
        Ok(out)
    }

    /// Dense `H^T` (`n_s x n_m`).
    pub fn transpose_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for (c, v) in self.row(i) {
                out[(c, i)] += v;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.transpose_dense().transpose()
    }

    /// `H diag(d)`, keeping the sparsity pattern.
    pub fn scale_columns(&self, d: &DVector<f64>) -> Result<Self> {
        if d.len() != self.n_cols {
            return Err(Error::dim("H column scaling", self.n_cols, d.len()));
        }
        let mut out = self.clone();
        for (v, &c) in out.values.iter_mut().zip(&self.col_idx) {
            *v *= d[c];
        }
        Ok(out)
    }

    /// True when both operators share one sparsity pattern.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }
}

/// Ray-path operator for every source-receiver pair, rows source-major.
pub fn build_measurement_operator(
    grid: &Grid,
    layout: &SourceReceiverLayout,
) -> Result<MeasurementOperator> {
    layout.validate(grid)?;
    let pairs: Vec<(Point, Point)> = layout.pairs().collect();
    let rows: Vec<Vec<(usize, f64)>> = pairs
        .par_iter()
        .map(|(s, r)| trace_ray(grid, *s, *r))
        .collect::<Result<_>>()?;
    MeasurementOperator::from_rows(grid.len(), rows)
}

/// `H^T R^{-1} H` as a matrix-free operator.
pub struct NormalOperator<'a> {
    pub h: &'a MeasurementOperator,
    pub noise: &'a DiagonalNoise,
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.h.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let hx = self.h.apply(x)?;
        self.h.apply_transpose(&self.noise.inverse_apply(&hx))
    }

    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut hx = self.h.apply_mat(x)?;
        for (i, v) in self.noise.variances().iter().enumerate() {
            hx.row_mut(i).unscale_mut(*v);
        }
        self.h.apply_transpose_mat(&hx)
    }
}

/// `y = H s + v` with `v ~ N(0, sigma2 I)` drawn from `rng`.
pub fn simulate_observations<R: Rng + ?Sized>(
    h: &MeasurementOperator,
    field: &DVector<f64>,
    sigma2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be nonnegative, got {sigma2}"
        )));
    }
    let mut y = h.apply(field)?;
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for v in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += sd * e;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_layout_has_288_rows() {
        let g = Grid::unit(59, 55).unwrap();
        let layout = SourceReceiverLayout::crosswell(&g, 6, 48).unwrap();
        let h = build_measurement_operator(&g, &layout).unwrap();
        assert_eq!(h.nrows(), 288);
        assert_eq!(h.ncols(), 3245);
        // O(sqrt(n_s)) entries per row
        assert!(h.nnz() <= 288 * 2 * (59 + 55));
    }

    #[test]
    fn single_cell_single_ray() {
        let g = Grid::new(1, 1, 2.0, 1.0).unwrap();
        let layout = SourceReceiverLayout {
            sources: vec![Point::new(0.0, 0.25)],
            receivers: vec![Point::new(2.0, 0.75)],
        };
        let h = build_measurement_operator(&g, &layout).unwrap();
        assert_eq!(h.to_dense().shape(), (1, 1));
        assert!((h.to_dense()[(0, 0)] - (4.0f64 + 0.25).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_slowness_gives_scaled_chords() {
        let g = Grid::new(17, 13, 1.0, 0.8).unwrap();
        let layout = SourceReceiverLayout::crosswell(&g, 3, 5).unwrap();
        let h = build_measurement_operator(&g, &layout).unwrap();
        let c = 0.37;
        let y = h.apply(&DVector::from_element(g.len(), c)).unwrap();
        for (i, (s, r)) in layout.pairs().enumerate() {
            let chord = s.distance(&r);
            assert!((y[i] - c * chord).abs() <= 1e-12 * c * chord);
        }
    }

    #[test]
    fn transpose_matches_dense() {
        let g = Grid::unit(6, 5).unwrap();
        let layout = SourceReceiverLayout::crosswell(&g, 2, 3).unwrap();
        let h = build_measurement_operator(&g, &layout).unwrap();
        let y = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let dense = h.to_dense().transpose() * &y;
        assert!((h.apply_transpose(&y).unwrap() - dense).norm() < 1e-14);
    }

    #[test]
    fn noiseless_observations_are_exact() {
        let g = Grid::unit(8, 8).unwrap();
        let layout = SourceReceiverLayout::crosswell(&g, 2, 2).unwrap();
        let h = build_measurement_operator(&g, &layout).unwrap();
        let s = DVector::from_fn(64, |i, _| (i as f64).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = simulate_observations(&h, &s, 0.0, &mut rng).unwrap();
        assert_eq!(y, h.apply(&s).unwrap());
        assert!(simulate_observations(&h, &s, -1.0, &mut rng).is_err());
    }

    #[test]
    fn pure_noise_has_requested_variance() {
        let g = Grid::unit(4, 4).unwrap();
        let layout = SourceReceiverLayout::crosswell(&g, 10, 10).unwrap();
        let h = build_measurement_operator(&g, &layout).unwrap();
        let zero = DVector::zeros(16);
        let sigma2 = 2e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut n = 0.0;
        for _ in 0..1000 {
            let y = simulate_observations(&h, &zero, sigma2, &mut rng).unwrap();
            for v in y.iter() {
                sum += v;
                sum2 += v * v;
                n += 1.0;
            }
        }
        assert_eq!(n, 1e5);
        let mean = sum / n;
        let var = sum2 / n - mean * mean;
        assert!((var - sigma2).abs() <= 0.03 * sigma2, "variance {var}");
    }

    #[test]
    fn different_seeds_decorrelate() {
        let g = Grid::unit(4, 4).unwrap();
        let layout = SourceReceiverLayout::crosswell(&g, 100, 100).unwrap();
        let h = build_measurement_operator(&g, &layout).unwrap();
        let zero = DVector::zeros(16);
        let a = simulate_observations(&h, &zero, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = simulate_observations(&h, &zero, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a2 = simulate_observations(&h, &zero, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, a2);
        let corr = a.dot(&b) / (a.norm() * b.norm());
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }
}
