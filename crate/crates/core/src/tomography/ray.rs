use serde::{Deserialize, Serialize};

use crate::covariance::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Parameters closer than this (relative to the unit ray parameter) are
/// treated as the same crossing, so rays through grid corners never
/// produce zero-length or duplicated segments.
const TIE_EPS: f64 = 1e-12;

/// Cells crossed by the straight segment `src -> rec`, in order, with the
/// length of the segment inside each cell.
pub fn trace_ray(grid: &Grid, src: Point, rec: Point) -> Result<Vec<(usize, f64)>> {
    for p in [src, rec] {
        if !(p.x.is_finite() && p.y.is_finite()) || !grid.contains(p.x, p.y) {
            return Err(Error::OutsideDomain { x: p.x, y: p.y });
        }
    }
    let length = src.distance(&rec);
    if length <= TIE_EPS * grid.lx.max(grid.ly) {
        return Err(Error::DegenerateRay { x: src.x, y: src.y });
    }
    let (dx, dy) = (grid.dx(), grid.dy());
    let (ddx, ddy) = (rec.x - src.x, rec.y - src.y);

    let mut ts = Vec::with_capacity(grid.nx + grid.ny + 2);
    ts.push(0.0);
    ts.push(1.0);
    for k in 1..grid.nx {
        let xk = k as f64 * dx;
        if (xk - src.x) * (xk - rec.x) < 0.0 {
            ts.push((xk - src.x) / ddx);
        }
    }
    for k in 1..grid.ny {
        let yk = k as f64 * dy;
        if (yk - src.y) * (yk - rec.y) < 0.0 {
            ts.push((yk - src.y) / ddy);
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|b, a| *b - *a <= TIE_EPS);
    // dedup keeps the earlier value; make sure the segment still ends at 1
    if let Some(last) = ts.last_mut() {
        *last = 1.0;
    }

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let tm = 0.5 * (ta + tb);
        let mx = src.x + tm * ddx;
        let my = src.y + tm * ddy;
        let ix = ((mx / dx).floor().max(0.0) as usize).min(grid.nx - 1);
        let iy = ((my / dy).floor().max(0.0) as usize).min(grid.ny - 1);
        let cell = grid.index(ix, iy);
        let seg = (tb - ta) * length;
        match out.last_mut() {
            Some((c, l)) if *c == cell => *l += seg,
            _ => out.push((cell, seg)),
        }
    }
    Ok(out)
}
