//! System-noise covariance on a regular grid.
//!
//! [`CovarianceOperator`] applies a stationary kernel covariance either
//! through a circulant embedding and FFTs (`O(n log n)` per matvec) or as an
//! explicit dense matrix. Inverse application goes through conjugate
//! gradients on the fast matvec; square roots need the dense
//! eigendecomposition and are therefore limited to desk-scale grids.

mod circulant;
mod grid;
mod kernel;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use grid::Grid;
pub use kernel::{KernelFamily, KernelSpec};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, LinearOperator};
use circulant::CirculantEmbedding;

/// Dense eigendecompositions above this size are slow enough to warn about.
const DENSE_WARN_THRESHOLD: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    #[default]
    #[serde(alias = "fft")]
    CirculantFft,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootDirection {
    /// `Gamma^{1/2}`
    Sqrt,
    /// `Gamma^{-1/2}`
    InvSqrt,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    /// `None` means `ceil(10 * sqrt(n))`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub solution: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

enum Backend {
    Fft(CirculantEmbedding),
    Dense {
        matrix: DMatrix<f64>,
        eig: OnceLock<(DVector<f64>, DMatrix<f64>)>,
    },
}

pub struct CovarianceOperator {
    grid: Grid,
    spec: KernelSpec,
    backend: Backend,
    root_calls: AtomicUsize,
}

impl std::fmt::Debug for CovarianceOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("CovarianceOperator");
        d.field("grid", &self.grid).field("spec", &self.spec);
        match &self.backend {
            Backend::Fft(e) => d.field("embedding", e),
            Backend::Dense { .. } => d.field("mode", &"dense"),
        };
        d.finish()
    }
}

/// Kernel values on all nonnegative grid offsets, `table[oy * nx + ox]`.
fn offset_table(grid: &Grid, spec: &KernelSpec) -> Vec<f64> {
    let (dx, dy) = (grid.dx(), grid.dy());
    let mut table = vec![0.0; grid.len()];
    for oy in 0..grid.ny {
        for ox in 0..grid.nx {
            table[oy * grid.nx + ox] = spec.eval((ox as f64 * dx).hypot(oy as f64 * dy));
        }
    }
    table
}

impl CovarianceOperator {
    pub fn new(grid: Grid, spec: KernelSpec, mode: CovMode) -> Result<Self> {
        grid.validate()?;
        spec.validate()?;
        let backend = match mode {
            CovMode::CirculantFft => Backend::Fft(CirculantEmbedding::new(&grid, &spec)?),
            CovMode::Dense => Backend::Dense {
                matrix: Self::dense_matrix(&grid, &spec),
                eig: OnceLock::new(),
            },
        };
        Ok(CovarianceOperator {
            grid,
            spec,
            backend,
            root_calls: AtomicUsize::new(0),
        })
    }

    fn dense_matrix(grid: &Grid, spec: &KernelSpec) -> DMatrix<f64> {
        let n = grid.len();
        let table = offset_table(grid, spec);
        DMatrix::from_fn(n, n, |i, j| {
            let (ix, iy) = grid.coords(i);
            let (jx, jy) = grid.coords(j);
            table[iy.abs_diff(jy) * grid.nx + ix.abs_diff(jx)]
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> CovMode {
        match self.backend {
            Backend::Fft(_) => CovMode::CirculantFft,
            Backend::Dense { .. } => CovMode::Dense,
        }
    }

    fn mode_name(&self) -> &'static str {
        match self.backend {
            Backend::Fft(_) => "circulant-fft",
            Backend::Dense { .. } => "dense",
        }
    }

    /// Smallest and largest eigenvalue of the circulant embedding.
    pub fn embedding_spectrum(&self) -> Option<(f64, f64)> {
        match &self.backend {
            Backend::Fft(e) => Some(e.spectrum_range()),
            Backend::Dense { .. } => None,
        }
    }

    /// Padded embedding shape for fft mode.
    pub fn embedding_shape(&self) -> Option<(usize, usize)> {
        match &self.backend {
            Backend::Fft(e) => Some(e.padded_shape()),
            Backend::Dense { .. } => None,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.len() {
            return Err(Error::dim("cov_apply", self.len(), x.len()));
        }
        Ok(match &self.backend {
            Backend::Fft(e) => e.apply(x),
            Backend::Dense { matrix, .. } => matrix * x,
        })
    }

    pub fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.len() {
            return Err(Error::dim("cov_apply", self.len(), x.nrows()));
        }
        Ok(match &self.backend {
            Backend::Fft(e) => e.apply_many(x),
            Backend::Dense { matrix, .. } => matrix * x,
        })
    }

    /// Solves `Gamma y = x` by conjugate gradients on the matvec.
    pub fn solve(&self, x: &DVector<f64>, opts: &CgOptions) -> Result<CgSolution> {
        let n = self.len();
        if x.len() != n {
            return Err(Error::dim("cov_solve", n, x.len()));
        }
        if !(opts.tol > 0.0 && opts.tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "CG tolerance must lie in (0, 1), got {}",
                opts.tol
            )));
        }
        let bnorm = x.norm();
        if bnorm == 0.0 {
            return Ok(CgSolution {
                solution: DVector::zeros(n),
                iterations: 0,
                residual: 0.0,
            });
        }
        let max_iter = opts
            .max_iter
            .unwrap_or_else(|| (10.0 * (n as f64).sqrt()).ceil() as usize)
            .max(1);
        let target = opts.tol * bnorm;

        let mut y = DVector::zeros(n);
        let mut r = x.clone();
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        let mut it = 0;
        while it < max_iter {
            let ap = self.apply(&p)?;
            let pap = p.dot(&ap);
            if pap <= 0.0 {
                return Err(Error::Singular(
                    "covariance is not positive definite along a CG direction".into(),
                ));
            }
            let step = rr / pap;
            y.axpy(step, &p, 1.0);
            r.axpy(-step, &ap, 1.0);
            it += 1;
            let rr_new = r.dot(&r);
            if rr_new.sqrt() <= target {
                // confirm with the true residual; restart from it if the
                // recurrence has drifted
                r = x - self.apply(&y)?;
                let true_rr = r.dot(&r);
                if true_rr.sqrt() <= target {
                    return Ok(CgSolution {
                        solution: y,
                        iterations: it,
                        residual: true_rr.sqrt() / bnorm,
                    });
                }
                p = r.clone();
                rr = true_rr;
                continue;
            }
            p = &r + (rr_new / rr) * &p;
            rr = rr_new;
        }
        let residual = (x - self.apply(&y)?).norm() / bnorm;
        if residual <= opts.tol {
            return Ok(CgSolution {
                solution: y,
                iterations: it,
                residual,
            });
        }
        Err(Error::NotConverged {
            iterations: it,
            residual,
        })
    }

    fn dense_eig(&self) -> Result<&(DVector<f64>, DMatrix<f64>)> {
        match &self.backend {
            Backend::Dense { matrix, eig } => Ok(eig.get_or_init(|| {
                if matrix.nrows() > DENSE_WARN_THRESHOLD {
                    log::warn!(
                        "dense eigendecomposition of a {}x{} covariance",
                        matrix.nrows(),
                        matrix.nrows()
                    );
                }
                sym_eigen_desc(matrix)
            })),
            Backend::Fft(_) => Err(Error::UnsupportedMode {
                op: "cov_root_apply",
                mode: self.mode_name(),
            }),
        }
    }

    /// `Gamma^{1/2} x` or `Gamma^{-1/2} x` through the symmetric eigendecomposition.
    pub fn root_apply(&self, x: &DVector<f64>, direction: RootDirection) -> Result<DVector<f64>> {
        if x.len() != self.len() {
            return Err(Error::dim("cov_root_apply", self.len(), x.len()));
        }
        let (values, vectors) = self.dense_eig()?;
        self.root_calls.fetch_add(1, Ordering::Relaxed);
        let mut coeffs = vectors.tr_mul(x);
        for (c, &lam) in coeffs.iter_mut().zip(values.iter()) {
            if lam <= 0.0 {
                return Err(Error::Singular(format!(
                    "covariance eigenvalue {lam:.3e} is not positive"
                )));
            }
            *c *= match direction {
                RootDirection::Sqrt => lam.sqrt(),
                RootDirection::InvSqrt => 1.0 / lam.sqrt(),
            };
        }
        Ok(vectors * coeffs)
    }

    /// Number of square-root applications performed so far.
    pub fn root_applications(&self) -> usize {
        self.root_calls.load(Ordering::Relaxed)
    }

    /// Dense `Gamma^{1/2}` (or its inverse); dense mode only.
    pub fn root_matrix(&self, direction: RootDirection) -> Result<DMatrix<f64>> {
        let (values, vectors) = self.dense_eig()?;
        let scaled = DVector::from_iterator(
            values.len(),
            values.iter().map(|&l| match direction {
                RootDirection::Sqrt => l.max(0.0).sqrt(),
                RootDirection::InvSqrt => 1.0 / l.sqrt(),
            }),
        );
        let mut left = vectors.clone();
        for (j, s) in scaled.iter().enumerate() {
            left.column_mut(j).scale_mut(*s);
        }
        Ok(left * vectors.transpose())
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match &self.backend {
            Backend::Dense { matrix, .. } => matrix.diagonal(),
            Backend::Fft(_) => DVector::from_element(self.len(), self.spec.eval(0.0)),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.backend {
            Backend::Dense { matrix, .. } => matrix.trace(),
            Backend::Fft(_) => self.len() as f64 * self.spec.eval(0.0),
        }
    }

    pub fn diag_trace(&self) -> (DVector<f64>, f64) {
        (self.diagonal(), self.trace())
    }

    /// Explicit matrix, built from the kernel regardless of mode.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.backend {
            Backend::Dense { matrix, .. } => matrix.clone(),
            Backend::Fft(_) => Self::dense_matrix(&self.grid, &self.spec),
        }
    }

    /// Draws `count` independent `N(0, Gamma)` fields as columns.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<DMatrix<f64>> {
        match &self.backend {
            Backend::Fft(e) => Ok(e.sample(rng, count)),
            Backend::Dense { .. } => {
                let (values, vectors) = self.dense_eig()?;
                let n = self.len();
                let white = DMatrix::from_fn(n, count, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut left = vectors.clone();
                for (j, l) in values.iter().enumerate() {
                    left.column_mut(j).scale_mut(l.max(0.0).sqrt());
                }
                Ok(left * (vectors.transpose() * white))
            }
        }
    }
}

impl LinearOperator for CovarianceOperator {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        CovarianceOperator::apply(self, x)
    }

    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        CovarianceOperator::apply_many(self, x)
    }
}

/// `Gamma^{-1}` as an operator, each application a CG solve.
pub struct InverseCovariance<'a> {
    pub cov: &'a CovarianceOperator,
    pub opts: CgOptions,
}

impl LinearOperator for InverseCovariance<'_> {
    fn dim(&self) -> usize {
        self.cov.len()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.cov.solve(x, &self.opts)?.solution)
    }
}
