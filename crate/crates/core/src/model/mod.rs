//! The three networks of the detector: feature extractor, real/fake head and
//! bias head, each a separately freezable parameter group.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MaflError, Result};
use crate::numerics::rng::{streams, RngStream};
use crate::numerics::{Activation, Matrix, Mlp, ParamTensor, Real};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

fn default_hidden_g() -> Vec<usize> {
    vec![512, 256]
}
fn default_feature_dim() -> usize {
    256
}
fn default_head_hidden() -> Vec<usize> {
    vec![128]
}
fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub embed_dim: usize,
    #[serde(default = "default_hidden_g")]
    pub hidden_dims_g: Vec<usize>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_head_hidden")]
    pub realfake_hidden: Vec<usize>,
    #[serde(default = "default_head_hidden")]
    pub bias_hidden: Vec<usize>,
    pub k_pattern: usize,
    /// Hidden-layer activation. Only ReLU is supported.
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Number of content classes for the optional content head (part of the
    /// bias group). `None` disables it.
    #[serde(default)]
    pub content_classes: Option<usize>,
}

impl ModelSpec {
    pub fn new(embed_dim: usize, k_pattern: usize) -> Self {
        Self {
            embed_dim,
            hidden_dims_g: default_hidden_g(),
            feature_dim: default_feature_dim(),
            realfake_hidden: default_head_hidden(),
            bias_hidden: default_head_hidden(),
            k_pattern,
            activation: Activation::Relu,
            content_classes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self
            .hidden_dims_g
            .iter()
            .chain(&self.realfake_hidden)
            .chain(&self.bias_hidden)
            .chain([&self.embed_dim, &self.feature_dim]);
        if dims.into_iter().any(|&d| d == 0) {
            return Err(MaflError::Config("all layer dims must be >= 1".into()));
        }
        if self.k_pattern < 2 {
            return Err(MaflError::Config(format!(
                "k_pattern must be >= 2, got {}",
                self.k_pattern
            )));
        }
        if self.activation != Activation::Relu {
            return Err(MaflError::Config("hidden activation must be relu".into()));
        }
        if let Some(k) = self.content_classes {
            if k < 2 {
                return Err(MaflError::Config(format!(
                    "content_classes must be >= 2, got {k}"
                )));
            }
        }
        Ok(())
    }

    fn chain(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(hidden.len() + 2);
        v.push(input);
        v.extend_from_slice(hidden);
        v.push(output);
        v
    }

    pub fn extractor_dims(&self) -> Vec<usize> {
        Self::chain(self.embed_dim, &self.hidden_dims_g, self.feature_dim)
    }

    pub fn realfake_dims(&self) -> Vec<usize> {
        Self::chain(self.feature_dim, &self.realfake_hidden, 2)
    }

    pub fn bias_dims(&self) -> Vec<usize> {
        Self::chain(self.feature_dim, &self.bias_hidden, self.k_pattern)
    }

    pub fn content_dims(&self) -> Option<Vec<usize>> {
        self.content_classes
            .map(|k| Self::chain(self.feature_dim, &self.bias_hidden, k))
    }

    /// Total parameter count, from the layer dims alone.
    pub fn param_count(&self) -> usize {
        let count = |dims: &[usize]| dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
        count(&self.extractor_dims())
            + count(&self.realfake_dims())
            + count(&self.bias_dims())
            + self.content_dims().map_or(0, |d| count(&d))
    }
}

/// A named parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Extractor,
    Realfake,
    /// The bias head, plus the content head when one is configured.
    Bias,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Extractor, Group::Realfake, Group::Bias];

    pub fn name(self) -> &'static str {
        match self {
            Group::Extractor => "extractor",
            Group::Realfake => "realfake",
            Group::Bias => "bias",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = MaflError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extractor" => Ok(Group::Extractor),
            "realfake" => Ok(Group::Realfake),
            "bias" => Ok(Group::Bias),
            other => Err(MaflError::Config(format!(
                "unknown parameter group '{other}' (expected extractor, realfake or bias)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Real = f32> {
    pub spec: ModelSpec,
    pub extractor: Mlp<T>,
    pub realfake: Mlp<T>,
    pub bias: Mlp<T>,
    pub content: Option<Mlp<T>>,
}

/// Weights uniform in ±1/√fan_in, zero biases. Each network draws from its
/// own stream of `rng`'s seed, so e.g. enabling the content head leaves the
/// other networks' initial weights unchanged.
pub fn init_params<T: Real>(spec: &ModelSpec, rng: &RngStream) -> Result<ModelState<T>> {
    spec.validate()?;
    let extractor = Mlp::init(&spec.extractor_dims(), &mut rng.derive(streams::INIT_EXTRACTOR))?;
    let realfake = Mlp::init(&spec.realfake_dims(), &mut rng.derive(streams::INIT_REALFAKE))?;
    let bias = Mlp::init(&spec.bias_dims(), &mut rng.derive(streams::INIT_BIAS))?;
    let content = spec
        .content_dims()
        .map(|d| Mlp::init(&d, &mut rng.derive(streams::INIT_CONTENT)))
        .transpose()?;
    Ok(ModelState {
        spec: spec.clone(),
        extractor,
        realfake,
        bias,
        content,
    })
}

impl<T: Real> ModelState<T> {
    pub fn extract_features(&self, embeddings: &Matrix<T>) -> Result<Matrix<T>> {
        self.extractor.forward(embeddings)
    }

    pub fn predict_real_fake(&self, h: &Matrix<T>) -> Result<Matrix<T>> {
        self.realfake.forward(h)
    }

    pub fn predict_bias(&self, h: &Matrix<T>) -> Result<Matrix<T>> {
        self.bias.forward(h)
    }

    pub fn predict_content(&self, h: &Matrix<T>) -> Result<Option<Matrix<T>>> {
        self.content.as_ref().map(|c| c.forward(h)).transpose()
    }

    /// Probability of "fake" for each embedding row.
    pub fn fake_scores(&self, embeddings: &Matrix<T>) -> Result<Vec<f64>> {
        let logits = self.predict_real_fake(&self.extract_features(embeddings)?)?;
        Ok((0..logits.rows())
            .map(|r| {
                let d = logits.get(r, 1).as_f64() - logits.get(r, 0).as_f64();
                1.0 / (1.0 + (-d).exp())
            })
            .collect())
    }

    fn group_nets(&self, group: Group) -> Vec<&Mlp<T>> {
        match group {
            Group::Extractor => vec![&self.extractor],
            Group::Realfake => vec![&self.realfake],
            Group::Bias => std::iter::once(&self.bias).chain(&self.content).collect(),
        }
    }

    fn group_nets_mut(&mut self, group: Group) -> Vec<&mut Mlp<T>> {
        match group {
            Group::Extractor => vec![&mut self.extractor],
            Group::Realfake => vec![&mut self.realfake],
            Group::Bias => std::iter::once(&mut self.bias)
                .chain(self.content.as_mut())
                .collect(),
        }
    }

    pub fn set_trainable(&mut self, group: Group, flag: bool) {
        for net in self.group_nets_mut(group) {
            net.set_trainable(flag);
        }
    }

    pub fn is_trainable(&self, group: Group) -> bool {
        self.group_nets(group)[0].is_trainable()
    }

    pub fn group_params(&self, group: Group) -> Vec<&ParamTensor<T>> {
        self.group_nets(group)
            .into_iter()
            .flat_map(|n| n.params())
            .collect()
    }

    pub fn group_params_mut(&mut self, group: Group) -> Vec<&mut ParamTensor<T>> {
        self.group_nets_mut(group)
            .into_iter()
            .flat_map(|n| n.params_mut())
            .collect()
    }

    /// All parameters in checkpoint order: extractor, realfake, bias, content.
    pub fn all_params(&self) -> Vec<&ParamTensor<T>> {
        Group::ALL
            .iter()
            .flat_map(|&g| self.group_params(g))
            .collect()
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let ModelState {
            extractor,
            realfake,
            bias,
            content,
            ..
        } = self;
        extractor
            .params_mut()
            .chain(realfake.params_mut())
            .chain(bias.params_mut())
            .chain(content.iter_mut().flat_map(|c| c.params_mut()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.all_params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.all_params_mut() {
            p.zero_grad();
        }
    }

    /// SHA-256 of a group's parameter values, as lowercase hex.
    pub fn group_digest(&self, group: Group) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for p in self.group_params(group) {
            buf.clear();
            p.value.extend_le_bytes(&mut buf);
            hasher.update(&buf);
        }
        hex::encode(hasher.finalize())
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec.clone(),
            extractor: self.extractor.cast(),
            realfake: self.realfake.cast(),
            bias: self.bias.cast(),
            content: self.content.as_ref().map(Mlp::cast),
        }
    }
}
