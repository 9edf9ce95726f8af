mod common;

use common::*;
use fastkf::covariance::{CovMode, RootDirection};
use fastkf::filters::{fkf_init, fkf_step, FkfModel, LowRankState};
use fastkf::lowrank::GhepOptions;
use fastkf::uq::{
    conditional_sample, propagate_realization, relative_entropy, trace_criterion, variance,
    RealizationPropagator, SquareRootFactor,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn states(steps: usize) -> (Setup, FkfModel, Vec<LowRankState>) {
    let s = setup(10, 10, 2, 4, None, CovMode::Dense, steps, 41);
    let model = fkf_init(&s.cov, &s.h, &s.noise, &GhepOptions::new(8, 2)).unwrap();
    let mut st = LowRankState::initial(100);
    let mut out = Vec::new();
    for y in &s.obs {
        st = fkf_step(&st, &model, &s.h, y, &s.noise).unwrap();
        out.push(st.clone());
    }
    (s, model, out)
}

fn logdet(m: &DMatrix<f64>) -> f64 {
    let l = m.clone().cholesky().unwrap().l();
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

#[test]
fn measures_match_dense_at_three_steps() {
    let (s, _, sts) = states(10);
    for k in [1, 4, 9] {
        let st = &sts[k];
        let dense = st.covariance_dense(&s.gamma);
        let v = variance(st, &s.cov).unwrap();
        assert!(rel_vec(&v, &dense.diagonal()) <= 1e-8);
        let t = trace_criterion(st, &s.cov).unwrap();
        assert!((t - dense.trace()).abs() <= 1e-8 * dense.trace());
        let e = relative_entropy(st).unwrap();
        let want = 0.5 * (logdet(&dense) - logdet(&s.gamma));
        assert!(
            (e.exact - want).abs() <= 1e-8 * want.abs().max(1.0),
            "{} vs {want}",
            e.exact
        );
        let l = SquareRootFactor::new(st).unwrap().to_dense(&s.cov).unwrap();
        assert!(rel(&(&l * l.transpose()), &dense) <= 1e-10);
        assert!(rel_vec(&(&l * l.transpose()).diagonal(), &v) <= 1e-10);
        assert!(v.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn update_reduces_total_variance() {
    let (s, model, sts) = states(5);
    for pair in sts.windows(2) {
        // predicted covariance of the next step uses the old diagonal
        let mut pred = pair[0].clone();
        pred.alpha += 1.0;
        let before = trace_criterion(&pred, &s.cov).unwrap();
        let after = trace_criterion(&pair[1], &s.cov).unwrap();
        assert!(after <= before);
        assert_eq!(pair[1].w.ncols(), model.rank());
    }
}

#[test]
fn propagation_matches_per_step_sampling() {
    let (s, _, sts) = states(5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = DVector::from_fn(100, |_, _| StandardNormal.sample(&mut rng));
    let calls = s.cov.root_applications();
    let seq = propagate_realization(&u, &sts, &s.cov).unwrap();
    assert_eq!(s.cov.root_applications() - calls, 2);
    for (st, r) in sts.iter().zip(&seq) {
        let direct = conditional_sample(st, &s.cov, &u).unwrap();
        assert!((&direct - r).norm() <= 1e-12 * direct.norm().max(1.0));
    }
    let prop = RealizationPropagator::new(&s.cov, &u).unwrap();
    let calls = s.cov.root_applications();
    for st in &sts {
        prop.realize(st).unwrap();
    }
    assert_eq!(s.cov.root_applications(), calls);
}

#[test]
fn implied_factor_matches_every_step() {
    let (s, _, sts) = states(5);
    let r = s.cov.root_matrix(RootDirection::Sqrt).unwrap();
    let ir = s.cov.root_matrix(RootDirection::InvSqrt).unwrap();
    for st in &sts {
        // columns of L are realizations of unit inputs minus the mean
        let f = SquareRootFactor::new(st).unwrap();
        let mut l = DMatrix::zeros(100, 100);
        for j in 0..100 {
            let e = DVector::from_fn(100, |i, _| if i == j { 1.0 } else { 0.0 });
            l.set_column(j, &f.apply_with_roots(&(&r * &e), &(&ir * &e)));
        }
        assert!(rel(&(&l * l.transpose()), &st.covariance_dense(&s.gamma)) <= 1e-10);
        assert!(f.sigma().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}

#[test]
fn sample_statistics() {
    let (s, _, sts) = states(6);
    let st = &sts[5];
    let n_real = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut sum = DVector::zeros(100);
    let mut sq = DVector::zeros(100);
    for _ in 0..n_real {
        let u = DVector::from_fn(100, |_, _| StandardNormal.sample(&mut rng));
        let x = conditional_sample(st, &s.cov, &u).unwrap();
        sum += &x;
        sq += x.component_mul(&x);
    }
    let nf = n_real as f64;
    let mean = &sum / nf;
    let var = (&sq / nf - mean.component_mul(&mean)) * (nf / (nf - 1.0));
    let sd = variance(st, &s.cov).unwrap().map(f64::sqrt);
    for i in 0..100 {
        assert!((mean[i] - st.mean[i]).abs() <= 4.0 * sd[i] / nf.sqrt());
    }
    let trace = trace_criterion(st, &s.cov).unwrap();
    assert!((var.sum() - trace).abs() <= 0.05 * trace);
}
