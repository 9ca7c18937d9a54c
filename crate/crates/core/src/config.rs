//! The JSON run configuration shared by the command-line tools.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected at every level. Serializing a parsed file writes all effective
//! values, so the echoed document parses back to the same configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{MaflError, Result};
use crate::model::ModelSpec;
use crate::numerics::Activation;
use crate::training::TrainConfig;

/// Network shape. Input width, pattern count and content count come from
/// the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims_g: Vec<usize>,
    pub feature_dim: usize,
    pub realfake_hidden: Vec<usize>,
    pub bias_hidden: Vec<usize>,
    /// Adds a content head to the bias group.
    pub content_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = ModelSpec::new(1, 1);
        Self {
            hidden_dims_g: s.hidden_dims_g,
            feature_dim: s.feature_dim,
            realfake_hidden: s.realfake_hidden,
            bias_hidden: s.bias_hidden,
            content_head: false,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, embed_dim: usize, k_pattern: usize, k_content: usize) -> Result<ModelSpec> {
        let spec = ModelSpec {
            embed_dim,
            hidden_dims_g: self.hidden_dims_g.clone(),
            feature_dim: self.feature_dim,
            realfake_hidden: self.realfake_hidden.clone(),
            bias_hidden: self.bias_hidden.clone(),
            k_pattern,
            activation: Activation::Relu,
            content_classes: self.content_head.then_some(k_content),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Share of the training bundle held back for validation (stratified).
    pub val_fraction: f64,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.1,
        }
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| MaflError::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| MaflError::io(p, e))?;
                Self::parse(&text).map_err(|e| match e {
                    MaflError::Config(m) => MaflError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(MaflError::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| MaflError::json("run config", e))?;
        s.push('\n');
        Ok(s)
    }
}
