//! Metric-weighted Gram-Schmidt, randomized generalized eigendecomposition,
//! and truncated sums of low-rank symmetric factorizations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceOperator;
use crate::error::{Error, Result};
use crate::linalg::{frobenius, pinv_with_cond, sym_eigen_desc, LinearOperator};

/// Columns whose metric norm shrinks below this fraction during projection
/// are treated as linearly dependent.
pub const DROP_RELATIVE: f64 = 1e-12;

pub const DEFAULT_OVERSAMPLING: usize = 20;

/// Above this condition number of the sketch/basis product the single-pass
/// core matrix is not trusted.
const SINGLE_PASS_MAX_COND: f64 = 1e8;

/// An existing metric-orthonormal basis to project against, with its image
/// under the metric.
#[derive(Debug, Clone, Copy)]
pub struct Against<'a> {
    pub basis: &'a DMatrix<f64>,
    pub metric_basis: &'a DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Orthonormalized {
    /// `Q` with `Q^T B Q = I`.
    pub basis: DMatrix<f64>,
    /// `B Q`, from fresh metric applications.
    pub metric_basis: DMatrix<f64>,
    /// `R` (kept x input columns): the projected input equals `Q R`.
    pub coefficients: DMatrix<f64>,
    /// Components along the `against` basis, one column per input column.
    pub against_coefficients: Option<DMatrix<f64>>,
    /// Input columns that were dropped as dependent.
    pub dropped: Vec<usize>,
}

/// Classical Gram-Schmidt with a full second sweep, in the inner product
/// `<x, y> = x^T B y`.
pub fn b_orthonormalize(
    v: &DMatrix<f64>,
    metric: &dyn LinearOperator,
    against: Option<Against<'_>>,
) -> Result<Orthonormalized> {
    let n = metric.dim();
    if v.nrows() != n {
        return Err(Error::dim("b_orthonormalize input rows", n, v.nrows()));
    }
    if let Some(a) = against {
        if a.basis.nrows() != n || a.metric_basis.shape() != a.basis.shape() {
            return Err(Error::dim(
                "b_orthonormalize against basis rows",
                n,
                a.basis.nrows(),
            ));
        }
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "b_orthonormalize input has a non-finite entry at column {}",
            i / n.max(1)
        )));
    }
    let m = v.ncols();
    let bv = if m > 0 {
        metric.apply_many(v)?
    } else {
        DMatrix::zeros(n, 0)
    };

    let mut q = DMatrix::zeros(n, m);
    let mut bq = DMatrix::zeros(n, m);
    let mut r = DMatrix::zeros(m, m);
    let mut ca = against.map(|a| DMatrix::zeros(a.basis.ncols(), m));
    let mut dropped = Vec::new();
    let mut kept = 0;

    for j in 0..m {
        let mut x = v.column(j).into_owned();
        let pre = x.dot(&bv.column(j));
        if !(pre > 0.0 && pre.is_finite()) {
            dropped.push(j);
            continue;
        }
        let pre = pre.sqrt();
        for _ in 0..2 {
            if let (Some(a), Some(ca)) = (against, ca.as_mut()) {
                if a.basis.ncols() > 0 {
                    let c = a.metric_basis.tr_mul(&x);
                    x.gemv(-1.0, a.basis, &c, 1.0);
                    let mut col = ca.column_mut(j);
                    col += &c;
                }
            }
            if kept > 0 {
                let c = bq.columns(0, kept).tr_mul(&x);
                x.gemv(-1.0, &q.columns(0, kept), &c, 1.0);
                for (i, ci) in c.iter().enumerate() {
                    r[(i, j)] += ci;
                }
            }
        }
        let bx = metric.apply(&x)?;
        let post = x.dot(&bx);
        if !(post > 0.0) || post.sqrt() < DROP_RELATIVE * pre {
            dropped.push(j);
            continue;
        }
        let norm = post.sqrt();
        q.set_column(kept, &(x / norm));
        bq.set_column(kept, &(bx / norm));
        r[(kept, j)] = norm;
        kept += 1;
    }

    if !dropped.is_empty() {
        log::debug!("b_orthonormalize dropped {} of {m} columns", dropped.len());
    }
    Ok(Orthonormalized {
        basis: q.columns(0, kept).into_owned(),
        metric_basis: bq.columns(0, kept).into_owned(),
        coefficients: r.rows(0, kept).into_owned(),
        against_coefficients: ca,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchPasses {
    #[default]
    TwoPass,
    SinglePass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhepOptions {
    pub rank: usize,
    pub oversampling: usize,
    pub seed: u64,
    pub passes: SketchPasses,
}

impl GhepOptions {
    pub fn new(rank: usize, seed: u64) -> Self {
        GhepOptions {
            rank,
            oversampling: DEFAULT_OVERSAMPLING,
            seed,
            passes: SketchPasses::TwoPass,
        }
    }
}

/// Generalized eigenpairs of `A x = lambda Gamma^{-1} x`.
#[derive(Debug, Clone)]
pub struct GepResult {
    /// `U`, with `U^T Gamma^{-1} U = I`.
    pub basis: DMatrix<f64>,
    /// `Gamma^{-1} U`.
    pub dual: DMatrix<f64>,
    /// Nonincreasing, nonnegative.
    pub eigenvalues: DVector<f64>,
}

impl GepResult {
    pub fn new(basis: DMatrix<f64>, dual: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        if dual.shape() != basis.shape() {
            return Err(Error::dim("gep dual columns", basis.ncols(), dual.ncols()));
        }
        if eigenvalues.len() != basis.ncols() {
            return Err(Error::dim(
                "gep eigenvalues",
                basis.ncols(),
                eigenvalues.len(),
            ));
        }
        Ok(GepResult {
            basis,
            dual,
            eigenvalues,
        })
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `|| U^T Gamma^{-1} U - I ||_F` using the stored dual basis.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.basis.tr_mul(&self.dual);
        frobenius(&(g - DMatrix::identity(self.rank(), self.rank())))
    }

    /// Largest `|| Gamma z_i - u_i || / || u_i ||` over the dual columns.
    pub fn dual_defect(&self, cov: &CovarianceOperator) -> Result<f64> {
        if self.rank() == 0 {
            return Ok(0.0);
        }
        let image = cov.apply_many(&self.dual)?;
        Ok((0..self.rank())
            .map(|j| {
                let u = self.basis.column(j);
                (image.column(j) - u).norm() / u.norm().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max))
    }

    /// `A ~ (Gamma^{-1} U) Lambda (Gamma^{-1} U)^T` as a dense matrix.
    pub fn reduced_dense(&self) -> DMatrix<f64> {
        let mut scaled = self.dual.clone();
        for (j, l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*l);
        }
        scaled * self.dual.transpose()
    }
}

pub fn gaussian_matrix(nrows: usize, ncols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // column-major fill from one stream keeps the sketch independent of
    // how the later products are scheduled
    DMatrix::from_iterator(
        nrows,
        ncols,
        (0..nrows * ncols).map(|_| StandardNormal.sample(&mut rng)),
    )
}

/// Sketch of the range of `Gamma A`: the Gaussian test matrix, `A Omega`,
/// and its `Gamma`-orthonormalization. `metric_basis` is `Q = Gamma Qbar`,
/// orthonormal in the `Gamma^{-1}` inner product.
#[derive(Debug, Clone)]
pub struct RangeSketch {
    pub omega: DMatrix<f64>,
    pub sample: DMatrix<f64>,
    pub range: Orthonormalized,
}

pub fn randomized_range(
    a: &dyn LinearOperator,
    cov: &CovarianceOperator,
    opts: &GhepOptions,
) -> Result<RangeSketch> {
    let n = cov.len();
    if a.dim() != n {
        return Err(Error::dim("randomized_ghep operator", n, a.dim()));
    }
    let sketch = opts.rank + opts.oversampling;
    if sketch > n {
        return Err(Error::InvalidParameter(format!(
            "rank {} plus oversampling {} exceeds state dimension {n}",
            opts.rank, opts.oversampling
        )));
    }
    let omega = gaussian_matrix(n, sketch, opts.seed);
    let sample = a.apply_many(&omega)?;
    let range = if frobenius(&sample) == 0.0 {
        // no information: any metric-orthonormal basis is an eigenbasis
        b_orthonormalize(&omega, cov, None)?
    } else {
        b_orthonormalize(&sample, cov, None)?
    };
    if range.basis.ncols() == 0 {
        return Err(Error::RankCollapse);
    }
    Ok(RangeSketch {
        omega,
        sample,
        range,
    })
}

/// Randomized solver for `A x = lambda Gamma^{-1} x` with `A` symmetric
/// positive semidefinite. All metric work is covariance matvecs.
pub fn randomized_ghep(
    a: &dyn LinearOperator,
    cov: &CovarianceOperator,
    opts: &GhepOptions,
) -> Result<GepResult> {
    let n = cov.len();
    if opts.rank == 0 {
        if a.dim() != n {
            return Err(Error::dim("randomized_ghep operator", n, a.dim()));
        }
        return GepResult::new(
            DMatrix::zeros(n, 0),
            DMatrix::zeros(n, 0),
            DVector::zeros(0),
        );
    }
    let RangeSketch {
        omega,
        sample,
        range,
    } = randomized_range(a, cov, opts)?;
    let qbar = range.basis;
    let q = range.metric_basis;
    if frobenius(&sample) == 0.0 {
        let k = opts.rank.min(qbar.ncols());
        return GepResult::new(
            q.columns(0, k).into_owned(),
            qbar.columns(0, k).into_owned(),
            DVector::zeros(k),
        );
    }

    let two_pass = |q: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let aq = a.apply_many(q)?;
        Ok(q.tr_mul(&aq))
    };
    let t = match opts.passes {
        SketchPasses::TwoPass => two_pass(&q)?,
        SketchPasses::SinglePass => {
            let (left, cond) = pinv_with_cond(&omega.tr_mul(&qbar));
            if cond > SINGLE_PASS_MAX_COND {
                log::warn!("single-pass sketch product has condition {cond:.3e}; using two passes");
                two_pass(&q)?
            } else {
                let core = omega.tr_mul(&sample);
                &left * core * left.transpose()
            }
        }
    };

    let (values, vectors) = sym_eigen_desc(&t);
    let k = opts.rank.min(values.len());
    let s = vectors.columns(0, k);
    GepResult::new(
        &q * s,
        &qbar * s,
        DVector::from_iterator(k, values.iter().take(k).map(|l| l.max(0.0))),
    )
}

/// `|| A u_i - lambda_i Gamma^{-1} u_i || / max(lambda_i || Gamma^{-1} u_i ||, eps)`
/// per pair, with `Gamma^{-1} u_i` taken from the stored dual basis.
pub fn ghep_residual(result: &GepResult, a: &dyn LinearOperator) -> Result<Vec<f64>> {
    if result.rank() == 0 {
        return Ok(Vec::new());
    }
    let au = a.apply_many(&result.basis)?;
    Ok((0..result.rank())
        .map(|i| {
            let lam = result.eigenvalues[i];
            let z = result.dual.column(i);
            let res = (au.column(i) - z * lam).norm();
            res / (lam * z.norm()).max(f64::EPSILON)
        })
        .collect())
}

/// `W diag(d) W^T` with `W^T B W = I` for some metric `B`; `bw = B W`.
#[derive(Debug, Clone)]
pub struct LowRankSym {
    pub w: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl LowRankSym {
    pub fn new(w: DMatrix<f64>, d: DVector<f64>, metric: &dyn LinearOperator) -> Result<Self> {
        let bw = if w.ncols() > 0 {
            metric.apply_many(&w)?
        } else {
            DMatrix::zeros(w.nrows(), 0)
        };
        Self::from_parts(w, bw, d)
    }

    pub fn from_parts(w: DMatrix<f64>, bw: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if bw.shape() != w.shape() {
            return Err(Error::dim(
                "low-rank metric image columns",
                w.ncols(),
                bw.ncols(),
            ));
        }
        if d.len() != w.ncols() {
            return Err(Error::dim("low-rank diagonal", w.ncols(), d.len()));
        }
        Ok(LowRankSym { w, bw, d })
    }

    pub fn empty(n: usize) -> Self {
        LowRankSym {
            w: DMatrix::zeros(n, 0),
            bw: DMatrix::zeros(n, 0),
            d: DVector::zeros(0),
        }
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut scaled = self.w.clone();
        for (j, dj) in self.d.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*dj);
        }
        scaled * self.w.transpose()
    }

    fn select(&self, keep: &[usize]) -> Self {
        LowRankSym {
            w: self.w.select_columns(keep),
            bw: self.bw.select_columns(keep),
            d: DVector::from_iterator(keep.len(), keep.iter().map(|&j| self.d[j])),
        }
    }
}

fn kept_indices(values: &DVector<f64>, tol: f64) -> Vec<usize> {
    let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (0..values.len())
        .filter(|&i| !(values[i].abs() < tol * max))
        .collect()
}

/// `U D_U U^T + V D_V V^T` re-expressed as `W D W^T` with a single
/// metric-orthonormal basis, dropping modes below `tol` times the largest
/// magnitude. Signs of `D_U`, `D_V` are unrestricted.
pub fn add_low_rank(
    base: &LowRankSym,
    v: &DMatrix<f64>,
    d_v: &DVector<f64>,
    metric: &dyn LinearOperator,
    tol: f64,
) -> Result<LowRankSym> {
    let n = metric.dim();
    if base.w.nrows() != n {
        return Err(Error::dim("add_low_rank base rows", n, base.w.nrows()));
    }
    if v.nrows() != n {
        return Err(Error::dim("add_low_rank update rows", n, v.nrows()));
    }
    if d_v.len() != v.ncols() {
        return Err(Error::dim(
            "add_low_rank update diagonal",
            v.ncols(),
            d_v.len(),
        ));
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "truncation tolerance must be nonnegative, got {tol}"
        )));
    }
    if v.ncols() == 0 {
        return Ok(base.select(&kept_indices(&base.d, tol)));
    }

    let orth = b_orthonormalize(
        v,
        metric,
        Some(Against {
            basis: &base.w,
            metric_basis: &base.bw,
        }),
    )?;
    let ru = base.rank();
    let rv = orth.basis.ncols();
    let c1 = base.bw.tr_mul(v);
    let c2 = orth.metric_basis.tr_mul(v);
    let mut c = DMatrix::zeros(ru + rv, v.ncols());
    c.rows_mut(0, ru).copy_from(&c1);
    c.rows_mut(ru, rv).copy_from(&c2);

    let mut cd = c.clone();
    for (j, dj) in d_v.iter().enumerate() {
        cd.column_mut(j).scale_mut(*dj);
    }
    let mut m = cd * c.transpose();
    for (i, di) in base.d.iter().enumerate() {
        m[(i, i)] += di;
    }

    let (values, vectors) = sym_eigen_desc(&m);
    let keep = kept_indices(&values, tol);
    let s = vectors.select_columns(&keep);

    let mut joined = DMatrix::zeros(n, ru + rv);
    joined.columns_mut(0, ru).copy_from(&base.w);
    joined.columns_mut(ru, rv).copy_from(&orth.basis);
    let w = &joined * &s;
    joined.columns_mut(0, ru).copy_from(&base.bw);
    joined.columns_mut(ru, rv).copy_from(&orth.metric_basis);
    let bw = &joined * &s;
    LowRankSym::from_parts(
        w,
        bw,
        DVector::from_iterator(keep.len(), keep.iter().map(|&i| values[i])),
    )
}
