use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular 2-D grid of `nx * ny` cells over `[0, lx] x [0, ly]`.
///
/// Cells are indexed `iy * nx + ix` (x runs fastest); a field over the grid
/// is stored in that order everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        let g = Grid { nx, ny, lx, ly };
        g.validate()?;
        Ok(g)
    }

    /// Unit square discretized into `nx * ny` cells.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid must have at least one cell per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.lx.is_finite() && self.lx > 0.0 && self.ly.is_finite() && self.ly > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid extents must be positive, got lx={} ly={}",
                self.lx, self.ly
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (ix, iy) = self.coords(idx);
        ((ix as f64 + 0.5) * self.dx(), (iy as f64 + 0.5) * self.dy())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let tol = 1e-12 * self.lx.max(self.ly);
        x >= -tol && x <= self.lx + tol && y >= -tol && y <= self.ly + tol
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.nx, self.ny)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_degenerate() {
        assert!(Grid::new(0, 3, 1.0, 1.0).is_err());
        assert!(Grid::new(3, 3, 0.0, 1.0).is_err());
        assert!(Grid::new(3, 3, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn centers_are_cell_midpoints() {
        let g = Grid::new(4, 2, 2.0, 1.0).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.center(0), (0.25, 0.25));
        assert_eq!(g.center(g.index(3, 1)), (1.75, 0.75));
        assert_eq!(g.coords(5), (1, 1));
    }
}
