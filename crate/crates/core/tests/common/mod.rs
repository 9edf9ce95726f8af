#![allow(dead_code)]

use fastkf::covariance::{CovMode, CovarianceOperator, Grid, KernelSpec, RootDirection};
use fastkf::lowrank::gaussian_matrix;
use fastkf::noise::DiagonalNoise;
use fastkf::tomography::{
    build_measurement_operator, simulate_observations, MeasurementOperator, PlumeModel,
    SourceReceiverLayout,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SIGMA2: f64 = 2e-4;
pub const HOURS_PER_STEP: f64 = 3.0;
pub const DENSE_LIMIT: usize = 4000;

pub struct Setup {
    pub grid: Grid,
    pub cov: CovarianceOperator,
    pub gamma: DMatrix<f64>,
    pub h: MeasurementOperator,
    pub noise: DiagonalNoise,
    pub truth: Vec<DVector<f64>>,
    pub obs: Vec<DVector<f64>>,
}

pub fn default_kernel(grid: &Grid) -> KernelSpec {
    KernelSpec::powered_exponential(1e-4, 0.2 * grid.lx.max(grid.ly), 0.5).unwrap()
}

/// Cross-well problem with plume observations over `steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn setup(
    nx: usize,
    ny: usize,
    n_sou: usize,
    n_rec: usize,
    kernel: Option<KernelSpec>,
    mode: CovMode,
    steps: usize,
    seed: u64,
) -> Setup {
    let grid = Grid::unit(nx, ny).unwrap();
    let spec = kernel.unwrap_or_else(|| default_kernel(&grid));
    let cov = CovarianceOperator::new(grid, spec, mode).unwrap();
    // dense copies are only affordable on desk-scale grids
    let gamma = if grid.len() <= DENSE_LIMIT {
        cov.to_dense()
    } else {
        DMatrix::zeros(0, 0)
    };
    let layout = SourceReceiverLayout::crosswell(&grid, n_sou, n_rec).unwrap();
    let h = build_measurement_operator(&grid, &layout).unwrap();
    let noise = DiagonalNoise::isotropic(h.nrows(), SIGMA2).unwrap();
    let plume = PlumeModel::default_for(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = Vec::new();
    let mut obs = Vec::new();
    for k in 1..=steps {
        let t = plume.synthesize(&grid, k as f64 * HOURS_PER_STEP).unwrap();
        obs.push(simulate_observations(&h, &t, SIGMA2, &mut rng).unwrap());
        truth.push(t);
    }
    Setup {
        grid,
        cov,
        gamma,
        h,
        noise,
        truth,
        obs,
    }
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Generalized eigenvalues of `A x = lambda Gamma^{-1} x`, descending, from
/// `Gamma = L L^T` and the symmetric matrix `L^T A L`; eigenvectors are
/// `L y`, which are `Gamma^{-1}`-orthonormal.
pub fn dense_ghep(a: &DMatrix<f64>, gamma: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let l = gamma.clone().cholesky().expect("gamma is SPD").l();
    let core = l.transpose() * a * &l;
    let core = (&core + core.transpose()) * 0.5;
    let eig = core.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = l * eig.eigenvectors.select_columns(&order);
    (vals, vecs)
}

/// `(P^{-1} + H^T R^{-1} H)^{-1}` and the matching mean, the information
/// form of the update.
pub fn information_update(
    mean: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    innovation: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let rinv = DMatrix::from_diagonal(&r.map(|v| 1.0 / v));
    let pinv = p
        .clone()
        .try_inverse()
        .expect("prediction covariance invertible");
    let info = pinv + h.transpose() * &rinv * h;
    let post = info
        .try_inverse()
        .expect("posterior information invertible");
    let post = (&post + post.transpose()) * 0.5;
    let m = mean + &post * h.transpose() * rinv * innovation;
    (m, post)
}

/// Observations of the physical field `1 + perturbation`.
pub fn shifted(s: &Setup) -> Vec<DVector<f64>> {
    let ones = DVector::from_element(s.grid.len(), 1.0);
    let offset = s.h.apply(&ones).unwrap();
    s.obs.iter().map(|y| y + &offset).collect()
}

/// Extended filter with dense covariances and the power transform with
/// parameter `a`, written independently of the library.
pub fn dense_ekf(s: &Setup, ys: &[DVector<f64>], a: f64) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let n = s.grid.len();
    let hd = s.h.to_dense();
    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    let mut out = Vec::new();
    for y in ys {
        let pred = &cov + &s.gamma;
        let slope = mean.map(|x: f64| ((x + a) / a).powf(a - 1.0));
        let phys = mean.map(|x: f64| ((x + a) / a).powf(a));
        let mut hk = hd.clone();
        for (j, sl) in slope.iter().enumerate() {
            hk.column_mut(j).scale_mut(*sl);
        }
        let mut sm = &hk * &pred * hk.transpose();
        for i in 0..sm.nrows() {
            sm[(i, i)] += SIGMA2;
        }
        let gain = &pred * hk.transpose() * sm.try_inverse().unwrap();
        mean = &mean + &gain * (y - &hd * phys);
        cov = &pred - &gain * &hk * &pred;
        cov = (&cov + cov.transpose()) * 0.5;
        out.push((mean.clone(), cov.clone()));
    }
    out
}

/// `A = Gamma^{-1/2} X diag(spectrum) X^T Gamma^{-1/2}`, whose generalized
/// eigenvalues against `Gamma^{-1}` are exactly `spectrum`.
pub fn synthetic(cov: &CovarianceOperator, spectrum: &[f64], seed: u64) -> DMatrix<f64> {
    let n = cov.len();
    let x = gaussian_matrix(n, n, seed).qr().q();
    let mut xl = x.clone();
    for j in 0..n {
        xl.column_mut(j)
            .scale_mut(spectrum.get(j).copied().unwrap_or(0.0));
    }
    let whitened = xl * x.transpose();
    let ir = cov.root_matrix(RootDirection::InvSqrt).unwrap();
    &ir * whitened * &ir
}

/// Measured `||(I - Q Q^T Gamma^{-1}) Gamma A||` in the `Gamma^{-1}` norm.
pub fn representation_error(cov: &CovarianceOperator, a: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let r = cov.root_matrix(RootDirection::Sqrt).unwrap();
    let ir = cov.root_matrix(RootDirection::InvSqrt).unwrap();
    let whitened = &r * a * &r;
    let qt = &ir * q;
    let resid = &whitened - &qt * (qt.transpose() * &whitened);
    resid.singular_values().max()
}

pub fn dense_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, seed);
    g.tr_mul(&g) / n as f64 + DMatrix::identity(n, n)
}
