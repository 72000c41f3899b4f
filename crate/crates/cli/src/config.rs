//! JSON run configuration for `ballwise test` and `ballwise adjust`.
//!
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};

use ballwise::domain::{RadiusCap, DEFAULT_MEMBERSHIP_LIMIT};
use ballwise::glm::{DesignSpec, HypothesisSpec, StatisticKind};
use ballwise::permute::Scheme;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub inference: InferenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub components: Vec<ComponentConfig>,
    #[serde(default = "default_membership_limit")]
    pub membership_limit: usize,
}

fn default_membership_limit() -> usize {
    DEFAULT_MEMBERSHIP_LIMIT
}

fn default_circumference() -> f64 {
    std::f64::consts::TAU
}

fn unbounded() -> RadiusCap {
    RadiusCap::UNBOUNDED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcosphereSource {
    pub order: usize,
    #[serde(default = "unit")]
    pub radius: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentConfig {
    Mesh {
        /// OFF file; exclusive with `icosphere`.
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        icosphere: Option<IcosphereSource>,
        /// CSV of `i,j,length` edge-length overrides.
        #[serde(default)]
        edge_lengths: Option<PathBuf>,
        /// Cached distance matrix written by `ballwise distances`.
        #[serde(default)]
        distances: Option<PathBuf>,
        #[serde(default = "unbounded")]
        radius_cap: RadiusCap,
    },
    Circle {
        points: usize,
        #[serde(default = "default_circumference")]
        circumference: f64,
        #[serde(default = "unbounded")]
        radius_cap: RadiusCap,
    },
    Interval {
        points: usize,
        start: f64,
        end: f64,
        #[serde(default = "unbounded")]
        radius_cap: RadiusCap,
    },
}

impl ComponentConfig {
    pub fn radius_cap(&self) -> RadiusCap {
        match self {
            ComponentConfig::Mesh { radius_cap, .. }
            | ComponentConfig::Circle { radius_cap, .. }
            | ComponentConfig::Interval { radius_cap, .. } => *radius_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Header of grid-point ids, one row per observation.
    Csv,
    /// `u64` N, `u64` m, then N·m row-major `f64`, all little endian.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub format: Option<DataFormat>,
}

impl DataConfig {
    /// Explicit format, else guessed from the extension (`.csv` or binary).
    pub fn resolved_format(&self) -> DataFormat {
        self.format.unwrap_or_else(|| {
            match self.path.extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
                _ => DataFormat::Binary,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignConfig {
    InterceptOnly,
    TwoSample { labels: Vec<usize> },
    Trend { t: Vec<f64> },
    /// `N` rows of scalar covariates; the intercept is implicit.
    Covariates { rows: Vec<Vec<f64>> },
}

impl DesignConfig {
    pub fn build(&self, n_obs: usize) -> Result<DesignSpec, CliError> {
        let design = match self {
            DesignConfig::InterceptOnly => DesignSpec::intercept_only(n_obs),
            DesignConfig::TwoSample { labels } => DesignSpec::two_sample(labels).map_err(CliError::input)?,
            DesignConfig::Trend { t } => DesignSpec::trend(t),
            DesignConfig::Covariates { rows } => DesignSpec {
                covariates: rows.clone(),
                group_labels: None,
            },
        };
        if design.n_obs() != n_obs {
            return Err(CliError::Input(format!(
                "design has {} rows but the signal matrix has {n_obs} observations",
                design.n_obs()
            )));
        }
        design.matrix().map_err(CliError::input)?;
        Ok(design)
    }
}

/// Either `coefficient` (tests `β_k = 0`) or an explicit `contrast`/`value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisConfig {
    #[serde(default)]
    pub coefficient: Option<usize>,
    #[serde(default)]
    pub contrast: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub value: Option<Vec<f64>>,
    pub statistic: StatisticKind,
}

impl HypothesisConfig {
    pub fn build(&self, n_coefficients: usize) -> Result<HypothesisSpec, CliError> {
        match (&self.coefficient, &self.contrast) {
            (Some(k), None) => {
                if self.value.is_some() {
                    return Err(CliError::Input("`value` goes with `contrast`, not `coefficient`".into()));
                }
                if *k == 0 || *k >= n_coefficients {
                    return Err(CliError::Input(format!(
                        "coefficient {k} is out of range 1..{n_coefficients} (0 is the intercept)"
                    )));
                }
                Ok(HypothesisSpec::coefficient(*k, n_coefficients, self.statistic))
            }
            (None, Some(contrast)) => Ok(HypothesisSpec {
                contrast: contrast.clone(),
                value: self.value.clone().unwrap_or_else(|| vec![0.0; contrast.len()]),
                sidedness: self.statistic.sidedness(),
                statistic: self.statistic,
            }),
            _ => Err(CliError::Input(
                "hypothesis needs exactly one of `coefficient` and `contrast`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub design: DesignConfig,
    pub hypothesis: HypothesisConfig,
}

fn default_scheme() -> Scheme {
    Scheme::FreedmanLane
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub permutations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_points")]
    pub points: PathBuf,
    /// Per-ball table; also the input of `ballwise adjust`.
    #[serde(default)]
    pub balls: Option<PathBuf>,
    #[serde(default = "default_manifest")]
    pub manifest: PathBuf,
}

fn default_points() -> PathBuf {
    "points.csv".into()
}

fn default_manifest() -> PathBuf {
    "manifest.json".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            points: default_points(),
            balls: None,
            manifest: default_manifest(),
        }
    }
}

/// A parsed config with the raw bytes (for hashing) and its base directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig<T> {
    pub config: T,
    pub bytes: Vec<u8>,
    pub base_dir: PathBuf,
}

impl<T> LoadedConfig<T> {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<LoadedConfig<T>, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    let config = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))?;
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok(LoadedConfig { config, bytes, base_dir })
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.domain.components.is_empty() {
            return Err(CliError::Input("domain needs at least one component".into()));
        }
        for (l, c) in self.domain.components.iter().enumerate() {
            if let ComponentConfig::Mesh { path, icosphere, .. } = c {
                if path.is_some() == icosphere.is_some() {
                    return Err(CliError::Input(format!(
                        "mesh component {l} needs exactly one of `path` and `icosphere`"
                    )));
                }
            }
        }
        if self.inference.permutations == 0 {
            return Err(CliError::Input("inference.permutations must be positive".into()));
        }
        if !(self.inference.alpha > 0.0 && self.inference.alpha < 1.0) {
            return Err(CliError::Input(format!(
                "inference.alpha must lie in (0, 1), got {}",
                self.inference.alpha
            )));
        }
        Ok(())
    }
}
