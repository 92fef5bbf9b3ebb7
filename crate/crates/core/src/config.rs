//! Run configuration and run manifests.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! path = "panel.csv"        # relative to the config file
//! date_column = "date"
//!
//! [[transforms]]
//! name = "inflation"
//! source = "pce_index"
//! kind = "percent_change"   # or rate_difference
//!
//! [estimator]
//! method = "ivqr-auto"      # qr, ivqr-grid, ivqr-smoothed, ivqr-auto
//! covariance = "robust"     # or hac (lags default to horizon - 1)
//!
//! [[groups]]
//! name = "aggregate"
//! dependent = "ur"
//! horizons = [12, 36]
//! endogenous = "inflation"
//! controls = ["anfci", "term_spread"]
//! instruments = { supply = ["supply_pce"], demand = ["demand_pce"] }
//! ```
//!
//! A manifest written by a previous run also loads as a configuration, so a
//! run can be repeated from its manifest alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, DatasetSpec, Month, TimeSeriesPanel, YoyMode};
use crate::error::{Error, Result};
use crate::ivqr::{AlphaGrid, AutoGrid, IvqrOptions, SmoothingRule};
use crate::linear_iv::LinearIvOptions;
use crate::mc::DgpSpec;
use crate::qreg::{Bandwidth, CovarianceMode, QuantileLevel, SolverOptions};
use crate::record::EstimatorChoice;
use crate::risk::{self, ContrastMode, DensityOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub contrast: ContrastConfig,
    #[serde(default)]
    pub groups: Vec<GroupConfig>,
    #[serde(default)]
    pub mc: McConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "default_date_column")]
    pub date_column: String,
}

fn default_date_column() -> String {
    "date".into()
}

/// Year-over-year change of `source`, stored as `name`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transform {
    pub name: String,
    pub source: String,
    pub kind: YoyMode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceChoice {
    #[default]
    Robust,
    Hac,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthChoice {
    #[default]
    HallSheather,
    Bofinger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub method: EstimatorChoice,
    pub taus: Vec<f64>,
    pub tail_tau: f64,
    pub covariance: CovarianceChoice,
    /// Bartlett lags for `hac`; `horizon - 1` when absent.
    pub hac_lags: Option<usize>,
    pub bandwidth: BandwidthChoice,
    /// Fixed density bandwidth in outcome units, overriding `bandwidth`.
    pub bandwidth_value: Option<f64>,
    /// Fixed smoothing half-width for the smoothed estimator.
    pub smoothing_bandwidth: Option<f64>,
    /// Explicit alpha grid; otherwise anchored on 2SLS.
    pub grid: Option<AlphaGrid>,
    pub grid_points: usize,
    pub grid_half_width_se: f64,
    pub refinement_rounds: usize,
    pub max_iterations: usize,
    pub optimality_tol: f64,
    pub weak_f_threshold: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let auto = AutoGrid::default();
        let solver = SolverOptions::default();
        EstimatorConfig {
            method: EstimatorChoice::IvqrAuto,
            taus: risk::default_taus(),
            tail_tau: 0.8,
            covariance: CovarianceChoice::Robust,
            hac_lags: None,
            bandwidth: BandwidthChoice::HallSheather,
            bandwidth_value: None,
            smoothing_bandwidth: None,
            grid: None,
            grid_points: auto.points,
            grid_half_width_se: auto.half_width_se,
            refinement_rounds: auto.refinement_rounds,
            max_iterations: solver.max_iterations,
            optimality_tol: solver.optimality_tol,
            weak_f_threshold: 10.0,
        }
    }
}

impl EstimatorConfig {
    pub fn covariance_mode(&self, horizon_months: usize) -> CovarianceMode {
        match self.covariance {
            CovarianceChoice::Robust => CovarianceMode::Robust,
            CovarianceChoice::Hac => CovarianceMode::Hac(self.hac_lags.unwrap_or(horizon_months.saturating_sub(1))),
        }
    }

    pub fn ivqr_options(&self, horizon_months: usize) -> IvqrOptions {
        IvqrOptions {
            grid: self.grid,
            auto_grid: AutoGrid {
                points: self.grid_points,
                half_width_se: self.grid_half_width_se,
                refinement_rounds: self.refinement_rounds,
            },
            smoothing: self.smoothing_bandwidth.map_or(SmoothingRule::PlugIn, SmoothingRule::Fixed),
            density_bandwidth: match (self.bandwidth_value, self.bandwidth) {
                (Some(v), _) => Bandwidth::Fixed(v),
                (None, BandwidthChoice::HallSheather) => Bandwidth::HallSheather,
                (None, BandwidthChoice::Bofinger) => Bandwidth::Bofinger,
            },
            covariance: self.covariance_mode(horizon_months),
            solver: SolverOptions {
                max_iterations: self.max_iterations,
                optimality_tol: self.optimality_tol,
                ..SolverOptions::default()
            },
            ..IvqrOptions::default()
        }
    }

    pub fn linear_iv_options(&self, horizon_months: usize) -> LinearIvOptions {
        LinearIvOptions {
            covariance: self.covariance_mode(horizon_months),
            weak_f_threshold: self.weak_f_threshold,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("estimator.taus must be non-empty and strictly increasing".into()));
        }
        for &t in self.taus.iter().chain([&self.tail_tau]) {
            QuantileLevel::new(t).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.grid_points < 3 || !(self.grid_half_width_se > 0.0) {
            return Err(Error::Config("grid_points must be at least 3 and grid_half_width_se positive".into()));
        }
        for (name, v) in [("bandwidth_value", self.bandwidth_value), ("smoothing_bandwidth", self.smoothing_bandwidth)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("estimator.{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub tail_lower: f64,
    pub tail_upper: f64,
    /// Month whose regressors condition the density; the last month with
    /// all regressors observed when absent.
    pub conditioning_date: Option<Month>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        let d = DensityOptions::default();
        DensityConfig {
            tail_lower: d.tail_lower,
            tail_upper: d.tail_upper,
            conditioning_date: None,
        }
    }
}

impl DensityConfig {
    pub fn options(&self) -> DensityOptions {
        DensityOptions {
            tail_lower: self.tail_lower,
            tail_upper: self.tail_upper,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastChoice {
    #[default]
    Independent,
    BlockBootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub mode: ContrastChoice,
    pub reps: usize,
    /// Block length in months; the horizon when absent.
    pub block: Option<usize>,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            mode: ContrastChoice::Independent,
            reps: 200,
            block: None,
        }
    }
}

impl ContrastConfig {
    pub fn mode(&self, seed: u64) -> ContrastMode {
        match self.mode {
            ContrastChoice::Independent => ContrastMode::Independent,
            ContrastChoice::BlockBootstrap => ContrastMode::BlockBootstrap {
                reps: self.reps,
                block: self.block,
                seed,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    /// Groups are contrasted only within a category.
    #[serde(default = "default_category")]
    pub category: String,
    pub dependent: String,
    /// Series added to change densities for the level-shifted density;
    /// `dependent` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_series: Option<String>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    pub endogenous: String,
    #[serde(default)]
    pub controls: Vec<String>,
    /// Instrument label to instrument columns; each label is a separate run.
    pub instruments: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_start: Option<Month>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_end: Option<Month>,
}

fn default_category() -> String {
    "all".into()
}

fn default_horizons() -> Vec<usize> {
    vec![12]
}

impl GroupConfig {
    pub fn dataset_spec(&self, horizon_months: usize, instrument: &str) -> Result<DatasetSpec> {
        let instruments = self.instruments.get(instrument).ok_or_else(|| {
            Error::Config(format!(
                "group '{}' has no instrument set '{instrument}' (available: {})",
                self.name,
                self.instruments.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        let spec = DatasetSpec {
            label: format!("{}/h{}/{}", self.name, horizon_months, instrument),
            dependent: self.dependent.clone(),
            horizon_months,
            endogenous: self.endogenous.clone(),
            controls: self.controls.clone(),
            instruments: instruments.clone(),
            sample_start: self.sample_start,
            sample_end: self.sample_end,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn series_names(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.dependent)
            .chain(self.level_series.iter())
            .chain(std::iter::once(&self.endogenous))
            .chain(&self.controls)
            .chain(self.instruments.values().flatten())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n: usize,
    pub rho: f64,
    pub pi: f64,
    pub alpha_base: f64,
    pub alpha_slope: f64,
    pub reps: usize,
    pub taus: Vec<f64>,
    pub estimator: EstimatorChoice,
}

impl Default for McConfig {
    fn default() -> Self {
        let d = DgpSpec::default();
        McConfig {
            n: d.n,
            rho: d.rho,
            pi: d.pi,
            alpha_base: d.alpha_base,
            alpha_slope: d.alpha_slope,
            reps: 200,
            taus: vec![0.2, 0.5, 0.8],
            estimator: EstimatorChoice::IvqrGrid,
        }
    }
}

impl McConfig {
    pub fn dgp(&self, seed: u64) -> DgpSpec {
        DgpSpec {
            n: self.n,
            rho: self.rho,
            pi: self.pi,
            alpha_base: self.alpha_base,
            alpha_slope: self.alpha_slope,
            seed,
        }
    }
}

impl RunConfig {
    /// Parses TOML; a relative data path is resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config("configuration is empty".into()));
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads a TOML configuration, or the configuration embedded in a run
    /// manifest when the file is JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if text.trim_start().starts_with('{') {
            let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut cfg = m.config;
            cfg.resolve_paths(base);
            cfg.check()?;
            return Ok(cfg);
        }
        RunConfig::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(d) = &mut self.data {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
            if let Ok(abs) = std::path::absolute(&d.path) {
                d.path = abs;
            }
        }
    }

    /// Structural checks that need no data.
    pub fn check(&self) -> Result<()> {
        self.estimator.validate()?;
        let d = self.density.options();
        if !(0.0 < d.tail_lower && d.tail_lower < d.tail_upper && d.tail_upper < 1.0) {
            return Err(Error::Config("density tail levels must satisfy 0 < lower < upper < 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            if !seen.insert(&g.name) {
                return Err(Error::Config(format!("duplicate group '{}'", g.name)));
            }
            if g.horizons.is_empty() || g.horizons.contains(&0) {
                return Err(Error::Config(format!("group '{}' needs positive horizons", g.name)));
            }
            if g.instruments.is_empty() || g.instruments.values().any(|v| v.is_empty()) {
                return Err(Error::Config(format!("group '{}' needs non-empty instrument sets", g.name)));
            }
        }
        if self.contrast.mode == ContrastChoice::BlockBootstrap && self.contrast.reps < 2 {
            return Err(Error::Config("contrast.reps must be at least 2".into()));
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("configuration has no [data] section".into()))
    }

    /// Loads the CSV and applies the transforms in order.
    pub fn load_panel(&self) -> Result<TimeSeriesPanel> {
        let dc = self.data()?;
        let mut panel = data::load_csv(&dc.path, &dc.date_column)?;
        for t in &self.transforms {
            let src = panel
                .series(&t.source)
                .map_err(|_| Error::Config(format!("transform '{}' refers to unknown series '{}'", t.name, t.source)))?;
            let out = data::yoy_change(&src, t.kind)?;
            panel.insert(&t.name, &out);
        }
        Ok(panel)
    }

    /// Every series a group names must exist in the panel.
    pub fn validate_against(&self, panel: &TimeSeriesPanel) -> Result<()> {
        let names = panel.names();
        for g in &self.groups {
            for s in g.series_names() {
                if !names.contains(s) {
                    return Err(Error::Config(format!("group '{}' refers to unknown series '{s}'", g.name)));
                }
            }
        }
        Ok(())
    }

    pub fn group(&self, name: &str) -> Result<&GroupConfig> {
        self.groups.iter().find(|g| g.name == name).ok_or_else(|| {
            Error::Config(format!(
                "no group '{name}' (configured: {})",
                self.groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>().join(", ")
            ))
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configurations always serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: impl Into<String>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(FileDigest {
            path: label.into(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Everything needed to repeat a run. Holds no timestamps, so repeated runs
/// write identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}
