//! JSON experiment configuration. Every field has a default; `resolve`
//! fills the grid-dependent ones so a written config is fully explicit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::{CovMode, Grid, KernelFamily, KernelSpec};
use crate::error::{Error, Result};
use crate::filters::{EnkfOptions, FekfOptions, MAX_RELINEARIZATIONS};
use crate::lowrank::DEFAULT_OVERSAMPLING;
use crate::tomography::{PlumeModel, SourceReceiverLayout, WellGeometry};

/// Dense covariance paths are refused above this many cells unless forced.
pub const DENSE_POLICY_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Dense reference filter.
    Kf,
    #[default]
    Fkf,
    Ekf,
    Enkf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Kf => "kf",
            FilterKind::Fkf => "fkf",
            FilterKind::Ekf => "ekf",
            FilterKind::Enkf => "enkf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "kf" => Ok(FilterKind::Kf),
            "fkf" => Ok(FilterKind::Fkf),
            "ekf" => Ok(FilterKind::Ekf),
            "enkf" => Ok(FilterKind::Enkf),
            other => Err(Error::Config(format!(
                "filter kind {other:?} is not one of kf, fkf, ekf, enkf"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nx: 59,
            ny: 55,
            lx: 1.0,
            ly: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub theta: f64,
    /// `None` means `0.2 * max(lx, ly)`.
    pub length: Option<f64>,
    pub power: f64,
    pub nu: f64,
    pub alpha_scale: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            family: KernelFamily::PoweredExponential,
            theta: 1e-4,
            length: None,
            power: 0.5,
            nu: 0.5,
            alpha_scale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma2: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { sigma2: 2e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub n_sou: usize,
    pub n_rec: usize,
    pub wells: WellGeometry,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            n_sou: 6,
            n_rec: 48,
            wells: WellGeometry::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub n_steps: usize,
    pub hours_per_step: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            n_steps: 20,
            hours_per_step: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// Eigenpairs of the offline or per-step eigenproblem; `None` uses the
    /// number of measurements.
    pub rank: Option<usize>,
    pub oversampling: usize,
    pub trunc_tol: f64,
    pub ensemble_size: usize,
    pub inflation: f64,
    pub boxcox_alpha: f64,
    pub relinearizations: usize,
    pub cov_mode: CovMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            kind: FilterKind::Fkf,
            rank: None,
            oversampling: DEFAULT_OVERSAMPLING,
            trunc_tol: 1e-5,
            ensemble_size: 1000,
            inflation: 1.0,
            boxcox_alpha: 1.0,
            relinearizations: 1,
            cov_mode: CovMode::CirculantFft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub noise: NoiseConfig,
    pub layout: LayoutConfig,
    pub time: TimeConfig,
    pub filter: FilterConfig,
    /// `None` uses the two-blob default scaled to the domain.
    pub plume: Option<PlumeModel>,
    pub seed: u64,
}

fn field_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(field_err(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn count(path: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(field_err(path, "must be positive"))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Copy with the grid-dependent defaults written out.
    pub fn resolve(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        if out.kernel.length.is_none() {
            out.kernel.length = Some(0.2 * self.grid.lx.max(self.grid.ly));
        }
        if out.plume.is_none() {
            out.plume = Some(PlumeModel::default_for(&self.grid()?));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        count("grid.nx", g.nx)?;
        count("grid.ny", g.ny)?;
        if g.nx > u32::MAX as usize || g.ny > u32::MAX as usize {
            return Err(field_err("grid", "dimensions must fit in 32 bits"));
        }
        g.nx.checked_mul(g.ny)
            .ok_or_else(|| field_err("grid", "nx * ny overflows"))?;
        positive("grid.lx", g.lx)?;
        positive("grid.ly", g.ly)?;

        let k = &self.kernel;
        positive("kernel.theta", k.theta)?;
        if let Some(l) = k.length {
            positive("kernel.length", l)?;
        }
        match k.family {
            KernelFamily::PoweredExponential => {
                if !(k.power > 0.0 && k.power <= 2.0) {
                    return Err(field_err(
                        "kernel.power",
                        format!("must lie in (0, 2], got {}", k.power),
                    ));
                }
            }
            KernelFamily::Matern => {
                positive("kernel.nu", k.nu)?;
                if let Some(a) = k.alpha_scale {
                    positive("kernel.alpha_scale", a)?;
                }
            }
        }

        if !(self.noise.sigma2.is_finite() && self.noise.sigma2 >= 0.0) {
            return Err(field_err(
                "noise.sigma2",
                format!("must be nonnegative, got {}", self.noise.sigma2),
            ));
        }

        count("layout.n_sou", self.layout.n_sou)?;
        count("layout.n_rec", self.layout.n_rec)?;
        count("time.n_steps", self.time.n_steps)?;
        positive("time.hours_per_step", self.time.hours_per_step)?;

        let f = &self.filter;
        if let Some(r) = f.rank {
            count("filter.rank", r)?;
        }
        match f.kind {
            FilterKind::Kf => {}
            FilterKind::Fkf | FilterKind::Ekf => {
                if !(f.trunc_tol.is_finite() && (0.0..1.0).contains(&f.trunc_tol)) {
                    return Err(field_err(
                        "filter.trunc_tol",
                        format!("must lie in [0, 1), got {}", f.trunc_tol),
                    ));
                }
            }
            FilterKind::Enkf => {
                if f.ensemble_size < 2 {
                    return Err(field_err(
                        "filter.ensemble_size",
                        "needs at least 2 members",
                    ));
                }
                positive("filter.inflation", f.inflation)?;
            }
        }
        if f.kind == FilterKind::Ekf {
            positive("filter.boxcox_alpha", f.boxcox_alpha)?;
            if !(1..=MAX_RELINEARIZATIONS).contains(&f.relinearizations) {
                return Err(field_err(
                    "filter.relinearizations",
                    format!(
                        "must lie in 1..={MAX_RELINEARIZATIONS}, got {}",
                        f.relinearizations
                    ),
                ));
            }
        }
        if let Some(p) = &self.plume {
            p.validate().map_err(|e| field_err("plume", e))?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
            .map_err(|e| field_err("grid", e))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let k = &self.kernel;
        let length = k.length.unwrap_or(0.2 * self.grid.lx.max(self.grid.ly));
        let spec = match k.family {
            KernelFamily::PoweredExponential => {
                KernelSpec::powered_exponential(k.theta, length, k.power)
            }
            KernelFamily::Matern => KernelSpec::matern(k.theta, length, k.nu, k.alpha_scale),
        };
        spec.map_err(|e| field_err("kernel", e))
    }

    pub fn layout(&self) -> Result<SourceReceiverLayout> {
        SourceReceiverLayout::with_geometry(
            &self.grid()?,
            self.layout.n_sou,
            self.layout.n_rec,
            &self.layout.wells,
        )
        .map_err(|e| field_err("layout", e))
    }

    pub fn plume(&self) -> Result<PlumeModel> {
        match &self.plume {
            Some(p) => Ok(p.clone()),
            None => Ok(PlumeModel::default_for(&self.grid()?)),
        }
    }

    pub fn n_measurements(&self) -> usize {
        self.layout.n_sou * self.layout.n_rec
    }

    pub fn fekf_options(&self) -> FekfOptions {
        FekfOptions {
            rank: self.filter.rank,
            oversampling: self.filter.oversampling,
            trunc_tol: self.filter.trunc_tol,
            relinearizations: self.filter.relinearizations,
            seed: self.seed,
        }
    }

    pub fn enkf_options(&self) -> EnkfOptions {
        EnkfOptions {
            inflation: self.filter.inflation,
        }
    }

    /// Refuses dense covariance work above [`DENSE_POLICY_LIMIT`] cells.
    pub fn check_dense_policy(&self, what: &str, force: bool) -> Result<()> {
        let n = self.grid.nx * self.grid.ny;
        if n > DENSE_POLICY_LIMIT && !force {
            return Err(Error::Policy(format!(
                "{what} needs a dense {n}x{n} covariance; grids above \
                 {DENSE_POLICY_LIMIT} cells are refused without --force-dense"
            )));
        }
        Ok(())
    }
}
