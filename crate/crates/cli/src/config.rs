//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! d_model = 8
//! n_x = 12
//! nonlinearity = { kind = "mlp", hidden = 16 }
//!
//! [train]
//! learning_rate = 1e-2
//! reg_kind = "modal_l1"
//! reg_strength = 3e-4
//!
//! [gen]
//! order = 4
//! ```
//!
//! Every section is optional and every key falls back to its default.
//! Unknown keys are rejected.

use std::path::Path;

use anyhow::{Context, Result};
use lru_mor::data::GenConfig;
use lru_mor::deep_ssm::{DeepSsmConfig, Nonlinearity, NormKind};
use lru_mor::mor::ReductionMethod;
use lru_mor::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: DeepSsmConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradCheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub methods: Vec<ReductionMethod>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { methods: ReductionMethod::ALL.to_vec() }
    }
}

/// Settings of the finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub model: DeepSsmConfig,
    pub length: usize,
    pub n_skip: usize,
    /// Regularizer weight; kept at 1 so the regularizer gradient is not
    /// swamped by the data term.
    pub reg_strength: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: DeepSsmConfig {
                n_in: 1,
                n_out: 1,
                d_model: 4,
                n_x: 3,
                n_layers: 2,
                nonlinearity: Nonlinearity::Mlp { hidden: 4 },
                norm: NormKind::LayerNorm,
                n_skip_loss: 0,
            },
            length: 16,
            n_skip: 2,
            reg_strength: 1.0,
            step: 1e-5,
            tolerance: 1e-5,
        }
    }
}

impl Config {
    /// Parse TOML text. Syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Load `path` if given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
