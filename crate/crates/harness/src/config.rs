//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use obbo_core::optimizers::{ObboConfig, SobboConfig};
use obbo_core::problems::{MetaToyOptions, SplineStreamConfig, StreamConfig};
use serde::{Deserialize, Serialize};

/// Name of the configuration dialect, recorded in the manifest.
pub const CONFIG_FORMAT: &str = "toml";

/// Top level of a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub experiment: Vec<ExperimentConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One stream × optimizer pair, repeated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metrics: MetricsToggles,
    pub stream: StreamSpec,
    pub optimizer: OptimizerSpec,
}

/// Problem stream. The run seed replaces the stream's own `seed` field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSpec {
    Quadratic(StreamConfig),
    Spline(SplineStreamConfig),
    SplineCsv(SplineCsvSpec),
    MetaToy(MetaToySpec),
}

/// Spline batches loaded from a `t,split,x,y` file, relative to the
/// configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineCsvSpec {
    pub path: PathBuf,
    pub knots: Vec<f64>,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaToySpec {
    pub gamma: f64,
    pub stream: StreamConfig,
    #[serde(default)]
    pub options: MetaToyOptions,
}

/// Outer loop and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Obbo(ObboConfig),
    Sobbo(SobboConfig),
    Oagd(ObboConfig),
    Sobow(ObboConfig),
    Adam(ObboConfig),
    Sgdm(ObboConfig),
}

impl OptimizerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            OptimizerSpec::Obbo(_) => "obbo",
            OptimizerSpec::Sobbo(_) => "sobbo",
            OptimizerSpec::Oagd(_) => "oagd",
            OptimizerSpec::Sobow(_) => "sobow",
            OptimizerSpec::Adam(_) => "adam",
            OptimizerSpec::Sgdm(_) => "sgdm",
        }
    }

    /// The shared outer/inner parameters.
    pub fn obbo(&self) -> &ObboConfig {
        match self {
            OptimizerSpec::Sobbo(s) => &s.obbo,
            OptimizerSpec::Obbo(c)
            | OptimizerSpec::Oagd(c)
            | OptimizerSpec::Sobow(c)
            | OptimizerSpec::Adam(c)
            | OptimizerSpec::Sgdm(c) => c,
        }
    }

    pub fn obbo_mut(&mut self) -> &mut ObboConfig {
        match self {
            OptimizerSpec::Sobbo(s) => &mut s.obbo,
            OptimizerSpec::Obbo(c)
            | OptimizerSpec::Oagd(c)
            | OptimizerSpec::Sobow(c)
            | OptimizerSpec::Adam(c)
            | OptimizerSpec::Sgdm(c) => c,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_grid() -> usize {
    64
}

/// Which per-step metrics a run computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsToggles {
    #[serde(default = "yes")]
    pub regret: bool,
    #[serde(default = "yes")]
    pub hypergradient_error: bool,
    /// Path and function variation of the stream (one inner solve per grid
    /// point and round).
    #[serde(default)]
    pub variation: bool,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Record wall-clock time per step. Off by default because timings make
    /// outputs differ between runs.
    #[serde(default)]
    pub timing: bool,
}

impl Default for MetricsToggles {
    fn default() -> Self {
        Self {
            regret: true,
            hypergradient_error: true,
            variation: false,
            grid_points: default_grid(),
            timing: false,
        }
    }
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
