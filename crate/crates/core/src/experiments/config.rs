//! Experiment configuration files (TOML).
//!
//! ```toml
//! model = "lorenz2005"
//! surrogate = "nn"
//! n_x = 5
//! n_u = 50
//! replicates = 10
//! base_seed = 1
//!
//! [filter]
//! variant = "mf_enkf"
//! lambda = 0.5
//! recenter = true
//! ```
//!
//! Unset model-dependent fields are filled by [`ExperimentConfig::resolve`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::filters::{FilterConfig, FilterVariant};
use crate::localization::{Geometry, InflationSpec, LocalizationSpec};
use crate::lorenz::{self, LorenzParams};
use crate::observations::TrackGeometry;
use crate::qg::{self, DimensionlessQGConstants};

/// Environment variable naming the artifact directory.
pub const DATA_DIR_ENV: &str = "MFDA_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lorenz2005,
    Qg,
}

/// The cheap model: the neural surrogate, a low-resolution model `m<r>`
/// (`r` grid points for Lorenz-2005, `r` cells per side for QG), or nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SurrogateChoice {
    Nn,
    LowRes(usize),
    #[default]
    None,
}

impl FromStr for SurrogateChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nn" => Ok(Self::Nn),
            "none" => Ok(Self::None),
            _ => s
                .strip_prefix('m')
                .and_then(|r| r.parse().ok())
                .filter(|&r: &usize| r > 0)
                .map(Self::LowRes)
                .ok_or_else(|| format!("unknown surrogate `{s}` (expected nn, none or m<size>)")),
        }
    }
}

impl TryFrom<String> for SurrogateChoice {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<SurrogateChoice> for String {
    fn from(s: SurrogateChoice) -> String {
        s.to_string()
    }
}

impl fmt::Display for SurrogateChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Nn => f.write_str("nn"),
            Self::LowRes(r) => write!(f, "m{r}"),
            Self::None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_variant")]
    pub variant: FilterVariant,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Inflation of X and Û.
    #[serde(default = "one")]
    pub inflation: f64,
    /// Inflation of U; defaults to `inflation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflation_u: Option<f64>,
    /// Gaspari-Cohn radius in grid points; no localization when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localization_radius: Option<f64>,
    #[serde(default)]
    pub recenter: bool,
    #[serde(default = "yes")]
    pub tie_anomalies: bool,
}

fn default_variant() -> FilterVariant {
    FilterVariant::MfEnkf
}
fn default_lambda() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_sigma() -> f64 {
    2.0
}
fn default_replicates() -> usize {
    10
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            lambda: default_lambda(),
            inflation: 1.0,
            inflation_u: None,
            localization_radius: None,
            recenter: false,
            tie_anomalies: true,
        }
    }
}

impl FilterSection {
    pub fn to_filter_config(&self, geometry: Geometry) -> Result<FilterConfig, ExperimentError> {
        let inflation = InflationSpec::new(self.inflation, self.inflation, self.inflation_u.unwrap_or(self.inflation))
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let localization = self
            .localization_radius
            .map(|r| LocalizationSpec::new(geometry, r))
            .transpose()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let cfg = FilterConfig {
            variant: self.variant,
            lambda: self.lambda,
            inflation,
            localization,
            apply_recentering: self.recenter,
            apply_anomaly_tie: self.tie_anomalies,
        };
        cfg.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsSection {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Model steps between analyses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every_steps: Option<usize>,
    /// Number of equidistant observations (Lorenz-2005).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Satellite track layout (QG).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<TrackGeometry>,
}

impl Default for ObsSection {
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            every_steps: None,
            count: None,
            tracks: None,
        }
    }
}

/// How the control ensemble Û is charged against a budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// `N_X + N_U/s ≤ B`: Û rides along for free.
    #[default]
    ControlFree,
    /// `N_X + (N_X + N_U)/s ≤ B`.
    ControlCharged,
}

impl Accounting {
    /// Cost of an allocation in high-resolution run equivalents.
    pub fn cost(self, n_x: usize, n_u: usize, speedup: f64) -> f64 {
        let surrogate_runs = match self {
            _ if n_u == 0 => 0,
            Accounting::ControlFree => n_u,
            Accounting::ControlCharged => n_x + n_u,
        };
        n_x as f64 + surrogate_runs as f64 / speedup
    }

    /// Largest `N_U` affordable next to `n_x` full runs, if any.
    pub fn max_surrogates(self, n_x: usize, budget: f64, speedup: f64) -> Option<usize> {
        let slack = 1e-9;
        if n_x as f64 > budget + slack {
            return None;
        }
        let spare = (budget - n_x as f64) * speedup + slack;
        let n_u = match self {
            Accounting::ControlFree => spare.floor() as usize,
            Accounting::ControlCharged => (spare - n_x as f64).max(0.0).floor() as usize,
        };
        Some(n_u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub hr_equivalents: f64,
    pub ml_speedup: f64,
    #[serde(default)]
    pub accounting: Accounting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorenzSection {
    #[serde(default)]
    pub params: LorenzParams,
    #[serde(default = "lorenz_spin_up")]
    pub spin_up_steps: usize,
    /// Standard deviation of the initial ensemble around the truth.
    #[serde(default = "initial_spread")]
    pub initial_spread: f64,
}

fn lorenz_spin_up() -> usize {
    lorenz::SPIN_UP_STEPS
}
fn initial_spread() -> f64 {
    5.0
}

impl Default for LorenzSection {
    fn default() -> Self {
        Self {
            params: LorenzParams::default(),
            spin_up_steps: lorenz_spin_up(),
            initial_spread: initial_spread(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QgSection {
    #[serde(default)]
    pub constants: DimensionlessQGConstants,
    #[serde(default = "qg_cells")]
    pub cells: usize,
    #[serde(default = "qg_dt")]
    pub dt: f64,
    /// Snapshot library, relative to the data directory.
    #[serde(default = "qg_snapshots")]
    pub snapshots: String,
    #[serde(default = "qg_spin_up")]
    pub spin_up_steps: usize,
    #[serde(default = "qg_snapshot_count")]
    pub snapshot_count: usize,
    #[serde(default = "qg_snapshot_stride")]
    pub snapshot_stride: usize,
}

fn qg_cells() -> usize {
    qg::DEFAULT_CELLS
}
fn qg_dt() -> f64 {
    qg::DEFAULT_DT
}
fn qg_snapshots() -> String {
    "qg_snapshots.bin".into()
}
fn qg_spin_up() -> usize {
    16_000
}
fn qg_snapshot_count() -> usize {
    200
}
fn qg_snapshot_stride() -> usize {
    40
}

impl Default for QgSection {
    fn default() -> Self {
        Self {
            constants: DimensionlessQGConstants::default(),
            cells: qg_cells(),
            dt: qg_dt(),
            snapshots: qg_snapshots(),
            spin_up_steps: qg_spin_up(),
            snapshot_count: qg_snapshot_count(),
            snapshot_stride: qg_snapshot_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub surrogate: SurrogateChoice,
    pub n_x: usize,
    #[serde(default)]
    pub n_u: usize,
    /// Analysis cycles `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Replicates `M` (independent observation and ensemble seeds).
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub obs: ObsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSection>,
    #[serde(default)]
    pub lorenz: LorenzSection,
    #[serde(default)]
    pub qg: QgSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
    /// Weight file of the neural surrogate; defaults to the data directory's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    /// A configuration with every optional field at its default.
    pub fn new(model: ModelKind, surrogate: SurrogateChoice, n_x: usize, n_u: usize) -> Self {
        let mut cfg = Self {
            model,
            surrogate,
            n_x,
            n_u,
            cycles: None,
            burn_in: None,
            replicates: default_replicates(),
            base_seed: 0,
            filter: FilterSection::default(),
            obs: ObsSection::default(),
            budget: None,
            lorenz: LorenzSection::default(),
            qg: QgSection::default(),
            data_dir: None,
            weights: None,
            output_dir: None,
        };
        cfg.resolve();
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Fills the model-dependent defaults.
    pub fn resolve(&mut self) {
        match self.model {
            ModelKind::Lorenz2005 => {
                self.cycles.get_or_insert(1000);
                self.burn_in.get_or_insert(100);
                self.obs.every_steps.get_or_insert(lorenz::STEPS_PER_WINDOW);
                self.obs.count.get_or_insert(40);
            }
            ModelKind::Qg => {
                self.cycles.get_or_insert(375);
                self.burn_in.get_or_insert(75);
                self.obs.every_steps.get_or_insert(qg::STEPS_PER_WINDOW);
                if self.obs.tracks.is_none() {
                    let mut tracks = TrackGeometry::default_qg();
                    tracks.cells = self.qg.cells;
                    self.obs.tracks = Some(tracks);
                }
            }
        }
    }

    pub fn cycles(&self) -> usize {
        self.cycles.unwrap_or(0)
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(0)
    }

    /// Model steps per analysis cycle.
    pub fn every_steps(&self) -> usize {
        self.obs.every_steps.unwrap_or(0)
    }

    /// Model steps in one forecast window of the model's forward operator.
    pub fn window_steps(&self) -> usize {
        match self.model {
            ModelKind::Lorenz2005 => lorenz::STEPS_PER_WINDOW,
            ModelKind::Qg => qg::STEPS_PER_WINDOW,
        }
    }

    pub fn windows_per_cycle(&self) -> usize {
        self.every_steps() / self.window_steps()
    }

    /// Dimension of the assimilated state.
    pub fn state_dim(&self) -> usize {
        match self.model {
            ModelKind::Lorenz2005 => self.lorenz.params.n,
            ModelKind::Qg => (self.qg.cells - 1).pow(2),
        }
    }

    pub fn geometry(&self) -> Geometry {
        match self.model {
            ModelKind::Lorenz2005 => Geometry::Periodic1D { n: self.lorenz.params.n },
            ModelKind::Qg => Geometry::Grid2D {
                nx: self.qg.cells - 1,
                ny: self.qg.cells - 1,
            },
        }
    }

    pub fn filter_config(&self) -> Result<FilterConfig, ExperimentError> {
        self.filter.to_filter_config(self.geometry())
    }

    /// `data_dir`, else `$MFDA_DATA_DIR`, else `./data`.
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var(DATA_DIR_ENV).ok())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn weights_path(&self) -> PathBuf {
        match &self.weights {
            Some(w) => PathBuf::from(w),
            None => self.data_dir().join("weights").join(match self.model {
                ModelKind::Lorenz2005 => super::LORENZ_WEIGHTS,
                ModelKind::Qg => super::QG_WEIGHTS,
            }),
        }
    }

    pub fn snapshots_path(&self) -> PathBuf {
        self.data_dir().join(&self.qg.snapshots)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::Config(msg));
        if self.cycles() == 0 {
            return fail("cycles must be positive".into());
        }
        if self.burn_in() >= self.cycles() {
            return fail(format!("burn_in ({}) must be below cycles ({})", self.burn_in(), self.cycles()));
        }
        if self.replicates == 0 {
            return fail("replicates must be positive".into());
        }
        if !(self.obs.sigma >= 0.0 && self.obs.sigma.is_finite()) {
            return fail(format!("observation sigma must be finite and ≥ 0, got {}", self.obs.sigma));
        }
        let (every, window) = (self.every_steps(), self.window_steps());
        if every == 0 || every % window != 0 {
            return fail(format!("every_steps must be a positive multiple of {window}, got {every}"));
        }
        let uses_surrogate = match self.filter.variant {
            FilterVariant::MfEnkf => self.n_u > 0 || self.n_x == 0,
            FilterVariant::BaselineMerged => self.n_u > 0,
            FilterVariant::EnkfDeterministic | FilterVariant::EnkfPerturbed => false,
        };
        if uses_surrogate && self.surrogate == SurrogateChoice::None {
            return fail("this filter needs a surrogate but `surrogate = \"none\"`".into());
        }
        let members = match self.filter.variant {
            FilterVariant::MfEnkf => self.n_x.max(self.n_u),
            FilterVariant::BaselineMerged => self.n_x + self.n_u,
            _ => self.n_x,
        };
        if members == 0 {
            return fail("the configuration has no ensemble members".into());
        }
        if self.filter.variant == FilterVariant::MfEnkf && self.n_x == 0 && self.n_u < 2 {
            return fail("a surrogate-only run needs n_u ≥ 2".into());
        }
        if let Some(b) = &self.budget {
            if !(b.ml_speedup > 0.0) {
                return fail(format!("ml_speedup must be positive, got {}", b.ml_speedup));
            }
            let cost = b.accounting.cost(self.n_x, self.n_u, b.ml_speedup);
            if cost > b.hr_equivalents + 1e-9 {
                return fail(format!(
                    "(n_x={}, n_u={}) costs {cost} HR runs, over the budget of {}",
                    self.n_x, self.n_u, b.hr_equivalents
                ));
            }
        }
        match self.model {
            ModelKind::Lorenz2005 => {
                self.lorenz.params.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
                if let SurrogateChoice::LowRes(r) = self.surrogate {
                    lorenz::LowResSpec::new(r, self.lorenz.params.n).map_err(|e| ExperimentError::Config(e.to_string()))?;
                }
                if !(self.lorenz.initial_spread >= 0.0) {
                    return fail("initial_spread must be ≥ 0".into());
                }
            }
            ModelKind::Qg => {
                if self.qg.cells < 4 {
                    return fail("the QG grid needs at least 4 cells".into());
                }
                if let SurrogateChoice::LowRes(r) = self.surrogate {
                    if r < 2 || self.qg.cells % r != 0 {
                        return fail(format!("coarse grid {r} must divide {}", self.qg.cells));
                    }
                }
                if self.obs.tracks.as_ref().is_some_and(|t| t.cells != self.qg.cells) {
                    return fail("track geometry and QG grid disagree on the cell count".into());
                }
            }
        }
        self.filter_config()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_lorenz_file_gets_paper_defaults() {
        let cfg = ExperimentConfig::from_toml_str("model = \"lorenz2005\"\nsurrogate = \"m480\"\nn_x = 5\nn_u = 50\n").unwrap();
        assert_eq!(cfg.cycles(), 1000);
        assert_eq!(cfg.burn_in(), 100);
        assert_eq!(cfg.every_steps(), 2);
        assert_eq!(cfg.obs.count, Some(40));
        assert_eq!(cfg.obs.sigma, 2.0);
        assert_eq!(cfg.filter.lambda, 0.5);
        assert_eq!(cfg.surrogate, SurrogateChoice::LowRes(480));
    }

    #[test]
    fn qg_defaults() {
        let cfg = ExperimentConfig::new(ModelKind::Qg, SurrogateChoice::LowRes(64), 10, 100);
        assert_eq!(cfg.cycles(), 375);
        assert_eq!(cfg.burn_in(), 75);
        assert_eq!(cfg.windows_per_cycle(), 1);
        assert_eq!(cfg.state_dim(), 127 * 127);
        cfg.validate().unwrap();
    }

    #[test]
    fn resolved_copy_round_trips() {
        let cfg = ExperimentConfig::new(ModelKind::Lorenz2005, SurrogateChoice::Nn, 4, 20);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let bad = [
            "model = \"lorenz2005\"\nn_x = 5\nn_u = 5\n",
            "model = \"lorenz2005\"\nn_x = 5\ncycles = 10\nburn_in = 10\n",
            "model = \"lorenz2005\"\nsurrogate = \"m7\"\nn_x = 5\nn_u = 5\n",
            "model = \"lorenz2005\"\nn_x = 5\nbogus = 1\n",
            "model = \"lorenz2005\"\nn_x = 5\n[filter]\nlambda = 1.5\n",
            "model = \"lorenz2005\"\nn_x = 5\n[obs]\nevery_steps = 3\n",
            "model = \"lorenz2005\"\nsurrogate = \"nn\"\nn_x = 6\nn_u = 50\n[budget]\nhr_equivalents = 10\nml_speedup = 10\n",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(ExperimentError::Config(_))), "{text}");
        }
    }

    #[test]
    fn surrogate_names_parse() {
        assert_eq!("nn".parse::<SurrogateChoice>().unwrap(), SurrogateChoice::Nn);
        assert_eq!("m64".parse::<SurrogateChoice>().unwrap(), SurrogateChoice::LowRes(64));
        assert!("m".parse::<SurrogateChoice>().is_err());
        assert!("m0".parse::<SurrogateChoice>().is_err());
        assert_eq!(SurrogateChoice::LowRes(120).to_string(), "m120");
    }

    #[test]
    fn budget_accounting_reproduces_the_published_pairs() {
        let free = Accounting::ControlFree;
        assert_eq!(free.max_surrogates(10, 10.0, 10.0), Some(0));
        assert_eq!(free.max_surrogates(5, 10.0, 10.0), Some(50));
        assert_eq!(free.max_surrogates(0, 10.0, 10.0), Some(100));
        assert_eq!(free.max_surrogates(11, 10.0, 10.0), None);
        let charged = Accounting::ControlCharged;
        assert_eq!(charged.max_surrogates(5, 10.0, 10.0), Some(45));
        assert!((charged.cost(5, 50, 10.0) - 10.5).abs() < 1e-12);
        assert!((free.cost(5, 50, 10.0) - 10.0).abs() < 1e-12);
        assert_eq!(charged.cost(10, 0, 10.0), 10.0);
    }
}
