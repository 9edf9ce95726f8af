//! End-to-end checks of the `fastkf` binary and the subcommand functions.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use fastkf::cli::{self, BenchOptions};
use fastkf::config::{ExperimentConfig, FilterKind};
use fastkf::covariance::{CovMode, CovarianceOperator};
use fastkf::filters::LowRankState;
use fastkf::io;
use fastkf::tomography::build_measurement_operator;
use nalgebra::DMatrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fastkf"))
}

fn small_config(kind: FilterKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.grid.nx = 20;
    c.grid.ny = 20;
    c.layout.n_sou = 4;
    c.layout.n_rec = 6;
    c.filter.kind = kind;
    c.filter.trunc_tol = 0.0;
    c.seed = 11;
    c
}

fn write_config(dir: &Path, name: &str, c: &ExperimentConfig) -> PathBuf {
    let p = dir.join(name);
    c.save(&p).unwrap();
    p
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn generated(dir: &Path, c: &ExperimentConfig) -> PathBuf {
    let data = dir.join("data");
    cli::generate(c, &data).unwrap();
    data
}

#[test]
fn generate_covers_sixty_hours_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_config(FilterKind::Fkf));
    for name in ["a", "b"] {
        run_ok(
            bin()
                .args(["generate", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(tmp.path().join(name)),
        );
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let obs = io::read_observations(&a.join("observations.csv")).unwrap();
    assert_eq!(obs.len(), 20);
    assert!(obs.iter().all(|y| y.len() == 24));
    let resolved = ExperimentConfig::load(&a.join("config.json")).unwrap();
    assert_eq!(
        resolved.time.n_steps as f64 * resolved.time.hours_per_step,
        60.0
    );
    assert!(resolved.kernel.length.is_some() && resolved.plume.is_some());

    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    assert_eq!(files.len(), 22);
    for f in files {
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{f:?}"
        );
    }

    // a different seed changes the noise but not the truth
    run_ok(
        bin()
            .args(["generate", "--seed", "12", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join("c")),
    );
    let c = tmp.path().join("c");
    assert_ne!(
        fs::read(a.join("observations.csv")).unwrap(),
        fs::read(c.join("observations.csv")).unwrap()
    );
    assert_eq!(
        fs::read(cli::truth_path(&a, 7)).unwrap(),
        fs::read(cli::truth_path(&c, 7)).unwrap()
    );
}

#[test]
fn noiseless_observations_are_exact_ray_sums() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(FilterKind::Fkf);
    c.noise.sigma2 = 0.0;
    c.time.n_steps = 4;
    let data = generated(tmp.path(), &c);
    let h = build_measurement_operator(&c.grid().unwrap(), &c.layout().unwrap()).unwrap();
    let obs = io::read_observations(&data.join("observations.csv")).unwrap();
    for (k, y) in obs.iter().enumerate() {
        let truth = io::read_field(&cli::truth_path(&data, k + 1)).unwrap();
        assert_eq!(*y, h.apply(&truth.values).unwrap());
    }
    // generation accepts zero noise, filtering does not
    let err = cli::run(&c, &data, &tmp.path().join("run"), None, false).unwrap_err();
    assert_eq!(cli::exit_code(&err), 2);
}

#[test]
fn fast_filter_matches_dense_reference_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generated(tmp.path(), &small_config(FilterKind::Fkf));
    let kf = tmp.path().join("kf");
    cli::run(&small_config(FilterKind::Kf), &data, &kf, None, false).unwrap();
    let fkf = tmp.path().join("fkf");
    let cfg = write_config(tmp.path(), "fkf.json", &small_config(FilterKind::Fkf));
    run_ok(
        bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&fkf)
            .arg("--reference")
            .arg(&kf),
    );
    let rows = io::read_metrics(&fkf.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 20);
    for r in &rows {
        let e = r.rel_l2_error.unwrap();
        assert!(e <= 1e-8, "step {}: {e}", r.step);
        assert_eq!(r.effective_rank, Some(24));
        assert!(r.wall_time_s >= 0.0);
        assert_eq!(r.hours, 3.0 * r.step as f64);
    }
    // the dense run reports its own trace; the low-rank trace must agree
    let kf_rows = io::read_metrics(&kf.join("metrics.csv")).unwrap();
    for (a, b) in rows.iter().zip(&kf_rows) {
        let (ta, tb) = (a.trace_criterion.unwrap(), b.trace_criterion.unwrap());
        assert!((ta - tb).abs() <= 1e-10 * tb);
        assert_eq!(b.effective_rank, None);
    }
}

#[test]
fn first_step_equals_prior_only_update() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(FilterKind::Fkf);
    c.time.n_steps = 1;
    let data = generated(tmp.path(), &c);
    let run = tmp.path().join("run");
    cli::run(&c, &data, &run, None, false).unwrap();

    let c = c.resolve().unwrap();
    let grid = c.grid().unwrap();
    let gamma = CovarianceOperator::new(grid, c.kernel_spec().unwrap(), CovMode::Dense)
        .unwrap()
        .to_dense();
    let h = build_measurement_operator(&grid, &c.layout().unwrap())
        .unwrap()
        .to_dense();
    let y = &io::read_observations(&data.join("observations.csv")).unwrap()[0];
    let s = &h * &gamma * h.transpose() + DMatrix::identity(24, 24) * c.noise.sigma2;
    let expect = &gamma * h.transpose() * s.lu().solve(y).unwrap();
    let got = io::read_field(&cli::mean_path(&run, 1)).unwrap().values;
    assert!((&got - &expect).norm() <= 1e-10 * expect.norm());

    let st = io::read_snapshot(&cli::snapshot_path(&run, 1)).unwrap();
    assert_eq!(st.alpha, 1.0);
    assert_eq!(st.step, 1);
}

#[test]
fn extended_filter_with_identity_transform_tracks_fast_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(FilterKind::Fkf);
    c.time.n_steps = 6;
    let data = generated(tmp.path(), &c);
    cli::run(&c, &data, &tmp.path().join("fkf"), None, false).unwrap();
    c.filter.kind = FilterKind::Ekf;
    c.filter.boxcox_alpha = 1.0;
    let rows = cli::run(
        &c,
        &data,
        &tmp.path().join("ekf"),
        Some(&tmp.path().join("fkf")),
        false,
    )
    .unwrap();
    for r in rows {
        assert!(r.rel_l2_error.unwrap() <= 1e-8, "{r:?}");
    }
}

fn dense_logdet(m: &DMatrix<f64>) -> f64 {
    let l = m.clone().cholesky().unwrap();
    2.0 * l.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

#[test]
fn uq_outputs_match_dense_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(FilterKind::Fkf);
    c.grid.nx = 10;
    c.grid.ny = 10;
    c.time.n_steps = 12;
    let data = generated(tmp.path(), &c);
    let run = tmp.path().join("run");
    cli::run(&c, &data, &run, None, false).unwrap();
    run_ok(bin().args(["uq", "--steps", "3,10,12", "--data"]).arg(&run));

    let c = c.resolve().unwrap();
    let gamma =
        CovarianceOperator::new(c.grid().unwrap(), c.kernel_spec().unwrap(), CovMode::Dense)
            .unwrap()
            .to_dense();
    let ld_gamma = dense_logdet(&gamma);
    let mut rdr = csv::Reader::from_path(run.join("uq.csv")).unwrap();
    let rows: Vec<(usize, f64, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(
        rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        vec![3, 10, 12]
    );
    for (step, _hours, trace, entropy) in rows {
        let st = io::read_snapshot(&cli::snapshot_path(&run, step)).unwrap();
        let sigma = st.covariance_dense(&gamma);
        assert!((trace - sigma.trace()).abs() <= 1e-10 * sigma.trace());
        let expect = 0.5 * (dense_logdet(&sigma) - ld_gamma);
        assert!(
            (entropy - expect).abs() <= 1e-8 * expect.abs().max(1.0),
            "{entropy} {expect}"
        );
        let var = io::read_field(&cli::variance_path(&run, step))
            .unwrap()
            .values;
        assert!((var - sigma.diagonal()).norm() <= 1e-10 * sigma.diagonal().norm());
    }
    // the 30 hour variance field
    assert!(cli::variance_path(&run, 10).exists());
}

#[test]
fn trace_of_rank_zero_state() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let mut c = small_config(FilterKind::Fkf);
    c.time.n_steps = 1;
    write_config(&run, "config.json", &c);
    let mut st = LowRankState::initial(400);
    st.alpha = 3.0;
    st.step = 1;
    io::write_snapshot(&cli::snapshot_path(&run, 1), &st).unwrap();
    run_ok(bin().args(["uq", "--what", "trace", "--data"]).arg(&run));
    let text = fs::read_to_string(run.join("uq.csv")).unwrap();
    let last = text.lines().nth(1).unwrap();
    let trace: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!((trace - 3.0 * 400.0 * 1e-4).abs() <= 1e-15);
    assert!(!run.join("variance").exists());
}

#[test]
fn samples_count_and_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generated(tmp.path(), &small_config(FilterKind::Fkf));
    let run = tmp.path().join("run");
    cli::run(&small_config(FilterKind::Fkf), &data, &run, None, false).unwrap();
    for out in ["s1", "s2"] {
        run_ok(
            bin()
                .args([
                    "sample", "--count", "3", "--steps", "1,10,20", "--seed", "5", "--data",
                ])
                .arg(&run)
                .arg("--out")
                .arg(tmp.path().join(out)),
        );
    }
    let files = files_under(&tmp.path().join("s1"));
    assert_eq!(files.len(), 9);
    for f in &files {
        assert_eq!(
            fs::read(tmp.path().join("s1").join(f)).unwrap(),
            fs::read(tmp.path().join("s2").join(f)).unwrap()
        );
    }
    // each realization differs from the mean and from the others
    let a = io::read_field(&cli::sample_path(&tmp.path().join("s1"), 10, 0)).unwrap();
    let b = io::read_field(&cli::sample_path(&tmp.path().join("s1"), 10, 1)).unwrap();
    let m = io::read_field(&cli::mean_path(&run, 10)).unwrap();
    assert!((&a.values - &m.values).norm() > 0.0);
    assert!((&a.values - &b.values).norm() > 0.0);
}

#[test]
fn dense_policy_refusal_names_the_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let mut c = ExperimentConfig::default();
    c.grid.nx = 150;
    c.grid.ny = 150;
    write_config(&run, "config.json", &c);
    let out = bin().args(["sample", "--data"]).arg(&run).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(
        msg.contains("20000") && msg.contains("--force-dense"),
        "{msg}"
    );
}

#[test]
fn exit_codes_and_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"filter": {"kind": "enkf", "ensemble_size": 1}}"#).unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("filter.ensemble_size"));

    fs::write(&bad, "{not json").unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // missing data directory is an ordinary failure
    let cfg = write_config(tmp.path(), "ok.json", &small_config(FilterKind::Fkf));
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(tmp.path().join("nowhere"))
        .arg("--out")
        .arg(tmp.path().join("r"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin()
        .env("FKF_THREADS", "zero")
        .args(["generate", "--out"])
        .arg(tmp.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["bench", "--grids", "59", "--out"])
        .arg(tmp.path().join("b.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_rejects_data_of_another_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generated(tmp.path(), &small_config(FilterKind::Fkf));
    let mut c = small_config(FilterKind::Fkf);
    c.grid.nx = 21;
    let err = cli::run(&c, &data, &tmp.path().join("r"), None, false).unwrap_err();
    assert!(err.to_string().contains("21x20"), "{err}");
    let mut c = small_config(FilterKind::Fkf);
    c.layout.n_rec = 7;
    assert!(cli::run(&c, &data, &tmp.path().join("r2"), None, false).is_err());
    let mut c = small_config(FilterKind::Fkf);
    c.time.n_steps = 21;
    assert!(cli::run(&c, &data, &tmp.path().join("r3"), None, false).is_err());
}

fn metrics_without_time(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("metrics.csv"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(2);
            cols.join(",")
        })
        .collect()
}

#[test]
fn metrics_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(FilterKind::Ekf);
    c.filter.boxcox_alpha = 2.0;
    c.filter.trunc_tol = 1e-5;
    c.time.n_steps = 5;
    let data = generated(tmp.path(), &c);
    let cfg = write_config(tmp.path(), "ekf.json", &c);
    for threads in ["1", "3"] {
        run_ok(
            bin()
                .env("FKF_THREADS", threads)
                .args(["run", "--config"])
                .arg(&cfg)
                .arg("--data")
                .arg(&data)
                .arg("--out")
                .arg(tmp.path().join(format!("t{threads}"))),
        );
    }
    let a = metrics_without_time(&tmp.path().join("t1"));
    assert_eq!(a.len(), 6);
    assert_eq!(a, metrics_without_time(&tmp.path().join("t3")));
    assert_eq!(
        fs::read(cli::mean_path(&tmp.path().join("t1"), 5)).unwrap(),
        fs::read(cli::mean_path(&tmp.path().join("t3"), 5)).unwrap()
    );
}

#[test]
fn ensemble_run_writes_means_but_no_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(FilterKind::Enkf);
    c.filter.ensemble_size = 50;
    c.time.n_steps = 3;
    let data = generated(tmp.path(), &c);
    let run = tmp.path().join("enkf");
    let rows = cli::run(&c, &data, &run, None, false).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.trace_criterion.unwrap() > 0.0 && r.effective_rank.is_none()));
    assert!(cli::mean_path(&run, 3).exists());
    assert!(!run.join("state").exists());
}

#[test]
fn bench_reports_each_grid_and_kind() {
    let mut c = small_config(FilterKind::Fkf);
    c.filter.ensemble_size = 20;
    let grids = io::parse_grid_list("12x10,16x14").unwrap();
    let opts = BenchOptions {
        repeats: 3,
        steps: 2,
        force_dense: false,
    };
    let rows = cli::bench(
        &c,
        &grids,
        &[FilterKind::Fkf, FilterKind::Kf, FilterKind::Enkf],
        &opts,
    )
    .unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[3].grid, "16x14");
    assert_eq!(rows[3].n_state, 224);
    assert!(rows
        .iter()
        .all(|r| r.offline_s >= 0.0 && r.per_step_s >= 0.0 && r.repeats == 3));

    let huge = [(200usize, 200usize)];
    assert!(cli::bench(&c, &huge, &[FilterKind::Kf], &opts).is_err());
}

#[test]
fn snapshot_survives_the_cli_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(FilterKind::Fkf);
    c.time.n_steps = 2;
    let data = generated(tmp.path(), &c);
    let run = tmp.path().join("run");
    cli::run(&c, &data, &run, None, false).unwrap();
    let st = io::read_snapshot(&cli::snapshot_path(&run, 2)).unwrap();
    let mean = io::read_field(&cli::mean_path(&run, 2)).unwrap();
    assert_eq!(st.mean, mean.values);
    let copy = LowRankState {
        w: Arc::new((*st.w).clone()),
        ..st.clone()
    };
    assert_eq!(
        io::encode_snapshot(&copy).unwrap(),
        fs::read(cli::snapshot_path(&run, 2)).unwrap()
    );
}
