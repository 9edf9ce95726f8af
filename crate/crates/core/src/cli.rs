//! Subcommands of the `fastkf` binary. Each one reads a JSON config, works
//! in a single output directory, and leaves that directory self-describing:
//!
//! ```text
//! data/   config.json  observations.csv  truth/step_0001.fkf ...
//! run/    config.json  metrics.csv  mean/step_0001.fkf  state/step_0001.fks
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{ExperimentConfig, FilterKind};
use crate::covariance::{CovMode, CovarianceOperator};
use crate::error::{Error, Result};
use crate::filters::{
    dense_kf_step, enkf_step, fekf_step, fkf_init, fkf_step, BoxCox, DenseFilterState, Ensemble,
    FkfModel, LowRankState, TransformMode,
};
use crate::io::{self, Field, MetricsRow};
use crate::lowrank::GhepOptions;
use crate::noise::DiagonalNoise;
use crate::tomography::{build_measurement_operator, simulate_observations, MeasurementOperator};
use crate::uq;

pub const CONFIG_FILE: &str = "config.json";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const UQ_FILE: &str = "uq.csv";
pub const THREADS_ENV: &str = "FKF_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fastkf",
    version,
    about = "Low-rank Kalman filtering for crosswell travel-time monitoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize true fields and noisy travel times.
    Generate(GenerateArgs),
    /// Run a filter over generated data.
    Run(RunArgs),
    /// Variance fields, trace criterion and relative entropy from a run.
    Uq(UqArgs),
    /// Posterior realizations from a run (dense square roots).
    Sample(SampleArgs),
    /// Offline and per-step timings over a list of grids.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Defaults to the config stored in the data directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Earlier run whose means serve as the error reference.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force_dense: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Measure {
    Variance,
    Trace,
    Entropy,
}

#[derive(Debug, Args)]
pub struct UqArgs {
    /// Run directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["variance", "trace", "entropy"])]
    pub what: Vec<Measure>,
    /// Comma-separated steps; all steps when omitted.
    #[arg(long)]
    pub steps: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Run directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force_dense: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Template config; its grid size is replaced by each listed grid.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated `WxH` list.
    #[arg(long, default_value = "59x55,117x109,234x219")]
    pub grids: String,
    /// Comma-separated filter kinds; defaults to the template's kind.
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Assimilation steps timed per repeat.
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
    /// CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force_dense: bool,
}

/// 2 for configuration problems, 1 for everything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Sizes the global thread pool from `FKF_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            generate(&cfg, &a.out)
        }
        Command::Run(a) => {
            let path = a.config.unwrap_or_else(|| a.data.join(CONFIG_FILE));
            let mut cfg = ExperimentConfig::load(&path)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            run(&cfg, &a.data, &a.out, a.reference.as_deref(), a.force_dense).map(|_| ())
        }
        Command::Uq(a) => {
            let steps = a.steps.as_deref().map(io::parse_step_list).transpose()?;
            let out = a.out.unwrap_or_else(|| a.data.clone());
            uq_extract(&a.data, &out, &a.what, steps.as_deref())
        }
        Command::Sample(a) => {
            let steps = a.steps.as_deref().map(io::parse_step_list).transpose()?;
            let out = a.out.unwrap_or_else(|| a.data.clone());
            sample(
                &a.data,
                &out,
                a.count,
                steps.as_deref(),
                a.seed,
                a.force_dense,
            )
        }
        Command::Bench(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let grids = io::parse_grid_list(&a.grids)?;
            let kinds = match &a.kinds {
                Some(list) => list
                    .split(',')
                    .map(FilterKind::parse)
                    .collect::<Result<Vec<_>>>()?,
                None => vec![cfg.filter.kind],
            };
            let opts = BenchOptions {
                repeats: a.repeats,
                steps: a.steps,
                force_dense: a.force_dense,
            };
            let rows = bench(&cfg, &grids, &kinds, &opts)?;
            io::write_csv(&a.out, &rows)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn step_file(dir: &Path, sub: &str, step: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("step_{step:04}.{ext}"))
}

pub fn truth_path(data: &Path, step: usize) -> PathBuf {
    step_file(data, "truth", step, "fkf")
}

pub fn mean_path(run: &Path, step: usize) -> PathBuf {
    step_file(run, "mean", step, "fkf")
}

pub fn snapshot_path(run: &Path, step: usize) -> PathBuf {
    step_file(run, "state", step, "fks")
}

pub fn variance_path(out: &Path, step: usize) -> PathBuf {
    step_file(out, "variance", step, "fkf")
}

pub fn sample_path(out: &Path, step: usize, realization: usize) -> PathBuf {
    out.join("samples")
        .join(format!("step_{step:04}_r{realization:03}.fkf"))
}

fn to_field(cfg: &ExperimentConfig, values: DVector<f64>) -> Result<Field> {
    Field::new(cfg.grid.nx, cfg.grid.ny, values)
}

type Series = Vec<DVector<f64>>;

/// Truth fields and observation batches for steps `1..=n_steps`.
pub fn synthesize(
    cfg: &ExperimentConfig,
    h: &MeasurementOperator,
    n_steps: usize,
) -> Result<(Series, Series)> {
    let grid = cfg.grid()?;
    let plume = cfg.plume()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truths = Vec::with_capacity(n_steps);
    let mut obs = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        let t = k as f64 * cfg.time.hours_per_step;
        let truth = plume.synthesize(&grid, t)?;
        obs.push(simulate_observations(
            h,
            &truth,
            cfg.noise.sigma2,
            &mut rng,
        )?);
        truths.push(truth);
    }
    Ok((truths, obs))
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let cfg = cfg.resolve()?;
    let h = build_measurement_operator(&cfg.grid()?, &cfg.layout()?)?;
    let (truths, obs) = synthesize(&cfg, &h, cfg.time.n_steps)?;
    std::fs::create_dir_all(out)?;
    for (k, t) in truths.into_iter().enumerate() {
        io::write_field(&truth_path(out, k + 1), &to_field(&cfg, t)?)?;
    }
    io::write_observations(&out.join(OBSERVATIONS_FILE), &obs)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    log::info!(
        "generated {} steps of {} measurements in {}",
        cfg.time.n_steps,
        h.nrows(),
        out.display()
    );
    Ok(())
}

/// Operators shared by every filter kind.
pub struct Problem {
    pub cfg: ExperimentConfig,
    pub cov: CovarianceOperator,
    pub h: MeasurementOperator,
    pub noise: DiagonalNoise,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig, force_dense: bool) -> Result<Self> {
        let cfg = cfg.resolve()?;
        if cfg.filter.cov_mode == CovMode::Dense {
            cfg.check_dense_policy("dense covariance mode", force_dense)?;
        }
        let grid = cfg.grid()?;
        let cov = CovarianceOperator::new(grid, cfg.kernel_spec()?, cfg.filter.cov_mode)?;
        let h = build_measurement_operator(&grid, &cfg.layout()?)?;
        let noise = DiagonalNoise::isotropic(h.nrows(), cfg.noise.sigma2)
            .map_err(|e| Error::Config(format!("noise.sigma2: {e}")))?;
        Ok(Problem { cfg, cov, h, noise })
    }

    pub fn len(&self) -> usize {
        self.cov.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cov.is_empty()
    }
}

/// Filter state for one run; each variant owns what its step needs.
pub enum Runner {
    Kf {
        gamma: DMatrix<f64>,
        state: DenseFilterState,
    },
    Fkf {
        model: Box<FkfModel>,
        state: LowRankState,
    },
    Ekf {
        transform: BoxCox,
        offset: DVector<f64>,
        state: LowRankState,
    },
    Enkf {
        ensemble: Ensemble,
    },
}

/// Measures reported per step; `None` where the kind has no cheap form.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepMeasures {
    pub rank: Option<usize>,
    pub trace: Option<f64>,
    pub entropy: Option<uq::RelativeEntropy>,
}

impl Runner {
    /// Offline stage: dense covariance, eigenpairs, or the empty ensemble.
    pub fn new(p: &Problem, force_dense: bool) -> Result<Self> {
        let n = p.len();
        let f = &p.cfg.filter;
        Ok(match f.kind {
            FilterKind::Kf => {
                p.cfg.check_dense_policy("the dense filter", force_dense)?;
                Runner::Kf {
                    gamma: p.cov.to_dense(),
                    state: DenseFilterState::initial(n),
                }
            }
            FilterKind::Fkf => {
                let rank = f.rank.unwrap_or(p.h.nrows());
                let mut opts = GhepOptions::new(rank, p.cfg.seed);
                opts.oversampling = f.oversampling.min(n.saturating_sub(rank));
                Runner::Fkf {
                    model: Box::new(fkf_init(&p.cov, &p.h, &p.noise, &opts)?),
                    state: LowRankState::initial(n),
                }
            }
            FilterKind::Ekf => Runner::Ekf {
                transform: BoxCox::new(f.boxcox_alpha)
                    .map_err(|e| Error::Config(format!("filter.boxcox_alpha: {e}")))?,
                // the transform acts on the full slowness 1 + perturbation
                offset: p.h.apply(&DVector::from_element(n, 1.0))?,
                state: LowRankState::initial(n),
            },
            FilterKind::Enkf => Runner::Enkf {
                ensemble: Ensemble::zeros(n, f.ensemble_size)?,
            },
        })
    }

    pub fn step(&mut self, p: &Problem, step: usize, y: &DVector<f64>) -> Result<()> {
        match self {
            Runner::Kf { gamma, state } => {
                *state = dense_kf_step(state, &p.h, y, gamma, &p.noise)?;
            }
            Runner::Fkf { model, state } => {
                *state = fkf_step(state, model, &p.h, y, &p.noise)?;
            }
            Runner::Ekf {
                transform,
                offset,
                state,
            } => {
                let shifted = y + &*offset;
                let opts = p.cfg.fekf_options();
                let (next, diag) =
                    fekf_step(state, &p.cov, &p.h, &shifted, &p.noise, transform, &opts)?;
                log::debug!("step {step}: {diag:?}");
                *state = next;
            }
            Runner::Enkf { ensemble } => {
                let opts = p.cfg.enkf_options();
                *ensemble =
                    enkf_step(ensemble, &p.h, y, &p.cov, &p.noise, p.cfg.seed, step, &opts)?;
            }
        }
        Ok(())
    }

    /// Slowness perturbation estimate.
    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(match self {
            Runner::Kf { state, .. } => state.mean.clone(),
            Runner::Fkf { state, .. } => state.mean.clone(),
            Runner::Ekf {
                transform, state, ..
            } => transform
                .apply(&state.mean, TransformMode::Inverse)?
                .add_scalar(-1.0),
            Runner::Enkf { ensemble } => ensemble.mean(),
        })
    }

    pub fn low_rank(&self) -> Option<&LowRankState> {
        match self {
            Runner::Fkf { state, .. } | Runner::Ekf { state, .. } => Some(state),
            _ => None,
        }
    }

    pub fn measures(&self, cov: &CovarianceOperator) -> Result<StepMeasures> {
        Ok(match self {
            Runner::Kf { state, .. } => StepMeasures {
                trace: Some(state.cov.trace()),
                ..Default::default()
            },
            Runner::Fkf { state, .. } | Runner::Ekf { state, .. } => StepMeasures {
                rank: Some(state.rank()),
                trace: Some(uq::trace_criterion(state, cov)?),
                entropy: Some(uq::relative_entropy(state)?),
            },
            Runner::Enkf { ensemble } => {
                let a = ensemble.anomalies();
                StepMeasures {
                    trace: Some(a.norm_squared() / (ensemble.size() as f64 - 1.0)),
                    ..Default::default()
                }
            }
        })
    }
}

fn rel_l2(x: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let scale = reference.norm();
    let diff = (x - reference).norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn check_field(cfg: &ExperimentConfig, f: &Field, what: &str) -> Result<()> {
    if (f.nx, f.ny) != (cfg.grid.nx, cfg.grid.ny) {
        return Err(Error::Format(format!(
            "{what} is {}x{}, config grid is {}x{}",
            f.nx, f.ny, cfg.grid.nx, cfg.grid.ny
        )));
    }
    Ok(())
}

/// Runs the configured filter over the data directory and writes means,
/// low-rank snapshots and `metrics.csv` to `out`.
pub fn run(
    cfg: &ExperimentConfig,
    data: &Path,
    out: &Path,
    reference: Option<&Path>,
    force_dense: bool,
) -> Result<Vec<MetricsRow>> {
    let problem = Problem::build(cfg, force_dense)?;
    let cfg = &problem.cfg;
    let obs = io::read_observations(&data.join(OBSERVATIONS_FILE))?;
    if obs.len() < cfg.time.n_steps {
        return Err(Error::dim(
            "observation steps in data",
            cfg.time.n_steps,
            obs.len(),
        ));
    }
    if let Some(y) = obs.iter().find(|y| y.len() != problem.h.nrows()) {
        return Err(Error::dim(
            "measurements per step in data",
            problem.h.nrows(),
            y.len(),
        ));
    }

    let mut runner = Runner::new(&problem, force_dense)?;
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let mut rows = Vec::with_capacity(cfg.time.n_steps);
    for (k, y) in obs.iter().take(cfg.time.n_steps).enumerate() {
        let step = k + 1;
        let start = Instant::now();
        runner.step(&problem, step, y)?;
        let wall = start.elapsed().as_secs_f64();

        let mean = runner.mean()?;
        io::write_field(&mean_path(out, step), &to_field(cfg, mean.clone())?)?;
        if let Some(s) = runner.low_rank() {
            io::write_snapshot(&snapshot_path(out, step), s)?;
        }

        let truth_file = truth_path(data, step);
        let rel_truth = if truth_file.exists() {
            let t = io::read_field(&truth_file)?;
            check_field(cfg, &t, "truth field")?;
            Some(rel_l2(&mean, &t.values))
        } else {
            None
        };
        let rel_ref = match reference {
            Some(dir) => {
                let r = io::read_field(&mean_path(dir, step))?;
                check_field(cfg, &r, "reference mean")?;
                Some(rel_l2(&mean, &r.values))
            }
            None => None,
        };
        let m = runner.measures(&problem.cov)?;
        rows.push(MetricsRow {
            step,
            hours: step as f64 * cfg.time.hours_per_step,
            wall_time_s: wall,
            rel_l2_error: rel_ref,
            rel_l2_error_truth: rel_truth,
            effective_rank: m.rank,
            trace_criterion: m.trace,
            relative_entropy: m.entropy.map(|e| e.exact),
            relative_entropy_reduced: m.entropy.map(|e| e.reduced),
        });
        log::info!("{} step {step}: {wall:.3}s", cfg.filter.kind.name());
    }
    io::write_csv(&out.join(METRICS_FILE), &rows)?;
    Ok(rows)
}

fn run_config(run_dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&run_dir.join(CONFIG_FILE))
}

fn selected_steps(cfg: &ExperimentConfig, steps: Option<&[usize]>) -> Result<Vec<usize>> {
    let all = cfg.time.n_steps;
    match steps {
        None => Ok((1..=all).collect()),
        Some(list) => {
            if let Some(&bad) = list.iter().find(|&&s| s == 0 || s > all) {
                return Err(Error::InvalidParameter(format!(
                    "step {bad} is outside 1..={all}"
                )));
            }
            Ok(list.to_vec())
        }
    }
}

fn load_states(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    steps: &[usize],
) -> Result<Vec<LowRankState>> {
    if !matches!(cfg.filter.kind, FilterKind::Fkf | FilterKind::Ekf) {
        return Err(Error::InvalidParameter(format!(
            "a {} run keeps no low-rank covariance snapshots",
            cfg.filter.kind.name()
        )));
    }
    let n = cfg.grid.nx * cfg.grid.ny;
    steps
        .iter()
        .map(|&s| {
            let st = io::read_snapshot(&snapshot_path(run_dir, s))?;
            if st.len() != n {
                return Err(Error::dim("snapshot state length", n, st.len()));
            }
            Ok(st)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UqRow {
    pub step: usize,
    pub hours: f64,
    pub trace_criterion: Option<f64>,
    pub relative_entropy: Option<f64>,
    pub relative_entropy_reduced: Option<f64>,
}

/// Variance fields go to `variance/`, scalar measures to `uq.csv`. Values
/// are in the filter's own coordinates (transformed ones for `ekf`).
pub fn uq_extract(
    run_dir: &Path,
    out: &Path,
    what: &[Measure],
    steps: Option<&[usize]>,
) -> Result<()> {
    let cfg = run_config(run_dir)?;
    let steps = selected_steps(&cfg, steps)?;
    let states = load_states(&cfg, run_dir, &steps)?;
    let cov = CovarianceOperator::new(cfg.grid()?, cfg.kernel_spec()?, CovMode::CirculantFft)?;
    let mut rows = Vec::new();
    for (&step, state) in steps.iter().zip(&states) {
        if what.contains(&Measure::Variance) {
            let v = uq::variance(state, &cov)?;
            io::write_field(&variance_path(out, step), &to_field(&cfg, v)?)?;
        }
        let trace = if what.contains(&Measure::Trace) {
            Some(uq::trace_criterion(state, &cov)?)
        } else {
            None
        };
        let entropy = if what.contains(&Measure::Entropy) {
            Some(uq::relative_entropy(state)?)
        } else {
            None
        };
        rows.push(UqRow {
            step,
            hours: step as f64 * cfg.time.hours_per_step,
            trace_criterion: trace,
            relative_entropy: entropy.map(|e| e.exact),
            relative_entropy_reduced: entropy.map(|e| e.reduced),
        });
    }
    if what.iter().any(|m| *m != Measure::Variance) {
        io::write_csv(&out.join(UQ_FILE), &rows)?;
    }
    Ok(())
}

/// `count` realizations at each selected step; realization `r` uses one
/// standard-normal draw from stream `r` of the seeded generator, carried
/// through every step.
pub fn sample(
    run_dir: &Path,
    out: &Path,
    count: usize,
    steps: Option<&[usize]>,
    seed: Option<u64>,
    force_dense: bool,
) -> Result<()> {
    let cfg = run_config(run_dir)?;
    cfg.check_dense_policy("sampling", force_dense)?;
    let steps = selected_steps(&cfg, steps)?;
    let states = load_states(&cfg, run_dir, &steps)?;
    let cov = CovarianceOperator::new(cfg.grid()?, cfg.kernel_spec()?, CovMode::Dense)?;
    let seed = seed.unwrap_or(cfg.seed);
    let transform = match cfg.filter.kind {
        FilterKind::Ekf => Some(BoxCox::new(cfg.filter.boxcox_alpha)?),
        _ => None,
    };
    let n = cov.len();
    for r in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let s_u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fields = uq::propagate_realization(&s_u, &states, &cov)?;
        for (&step, f) in steps.iter().zip(fields) {
            let f = match &transform {
                Some(t) => t.apply(&f, TransformMode::Inverse)?.add_scalar(-1.0),
                None => f,
            };
            io::write_field(&sample_path(out, step, r), &to_field(&cfg, f)?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub repeats: usize,
    pub steps: usize,
    pub force_dense: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub grid: String,
    pub n_state: usize,
    pub kind: String,
    pub repeats: usize,
    /// Operator construction plus the kind's offline stage.
    pub offline_s: f64,
    pub per_step_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn bench(
    template: &ExperimentConfig,
    grids: &[(usize, usize)],
    kinds: &[FilterKind],
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    if opts.repeats == 0 || opts.steps == 0 {
        return Err(Error::Config(
            "bench needs positive --repeats and --steps".into(),
        ));
    }
    let mut rows = Vec::new();
    for &(nx, ny) in grids {
        let mut cfg = template.clone();
        cfg.grid.nx = nx;
        cfg.grid.ny = ny;
        cfg.time.n_steps = opts.steps;
        for &kind in kinds {
            cfg.filter.kind = kind;
            if kind == FilterKind::Kf {
                cfg.check_dense_policy("the dense filter", opts.force_dense)?;
            }
            let mut offline = Vec::with_capacity(opts.repeats);
            let mut per_step = Vec::with_capacity(opts.repeats);
            let mut obs = None;
            for _ in 0..opts.repeats {
                let start = Instant::now();
                let problem = Problem::build(&cfg, opts.force_dense)?;
                let mut runner = Runner::new(&problem, opts.force_dense)?;
                offline.push(start.elapsed().as_secs_f64());
                if obs.is_none() {
                    obs = Some(synthesize(&problem.cfg, &problem.h, opts.steps)?.1);
                }
                let mut times = Vec::with_capacity(opts.steps);
                for (k, y) in obs.iter().flatten().enumerate() {
                    let t = Instant::now();
                    runner.step(&problem, k + 1, y)?;
                    times.push(t.elapsed().as_secs_f64());
                }
                per_step.push(median(times));
            }
            let row = BenchRow {
                grid: format!("{nx}x{ny}"),
                n_state: nx * ny,
                kind: kind.name().into(),
                repeats: opts.repeats,
                offline_s: median(offline),
                per_step_s: median(per_step),
            };
            log::info!("{row:?}");
            rows.push(row);
        }
    }
    Ok(rows)
}
