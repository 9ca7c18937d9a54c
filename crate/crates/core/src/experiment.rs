//! Held-out-pattern experiment on synthetic embeddings.
//!
//! One generator pattern is removed from the training and validation splits.
//! After training, real/fake accuracy is measured separately on the test
//! fakes of the seen patterns and of the held-out pattern (each against all
//! test reals), and linear probes measure how much pattern and content
//! information the learned features still carry.

use serde::{Deserialize, Serialize};

use crate::data::{split_bundle, subsample_bundle, synth_generate, EmbeddingBundle, SynthConfig};
use crate::error::{MaflError, Result};
use crate::metrics::{bias_leakage_probe, confusion_counts, ProbeConfig, ProbeResult, DEFAULT_THRESHOLD};
use crate::model::{ModelSpec, ModelState};
use crate::numerics::Activation;
use crate::training::{run_training, LossToggles, Selection, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeldOutConfig {
    pub synth: SynthConfig,
    /// Generator left out of training; defaults to the last one.
    pub held_out: Option<u32>,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Keep only this many training samples (stratified).
    pub train_subsample: Option<usize>,
    pub hidden_dims_g: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: Vec<usize>,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

impl Default for HeldOutConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                dim: 64,
                n_per_cell: 200,
                k_pattern: 4,
                k_content: 5,
                k_real_sources: 4,
                auth_strength: 2.0,
                pattern_strength: 3.0,
                content_strength: 1.0,
                noise_sigma: 1.0,
                seed: 0,
            },
            held_out: None,
            split: [0.7, 0.1, 0.2],
            train_subsample: None,
            hidden_dims_g: vec![256, 128],
            feature_dim: 64,
            head_hidden: vec![128],
            // Validation accuracy saturates within a few epochs, long before
            // lambda ramps up, so neither early stopping nor lr decay is used.
            train: TrainConfig {
                early_stopping: false,
                plateau_factor: 1.0,
                selection: Selection::FinalEpoch,
                ..TrainConfig::default()
            },
            probe: ProbeConfig::default(),
        }
    }
}

impl HeldOutConfig {
    /// The default setup at `seed` (data, init and batching all follow it)
    /// with the given adversarial terms.
    pub fn with_seed(seed: u64, toggles: LossToggles) -> Self {
        let mut cfg = Self::default();
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
        cfg.train.loss_toggles = toggles;
        cfg
    }

    pub fn held_out_pattern(&self) -> u32 {
        self.held_out
            .unwrap_or(self.synth.k_pattern.saturating_sub(1) as u32)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            embed_dim: self.synth.dim,
            hidden_dims_g: self.hidden_dims_g.clone(),
            feature_dim: self.feature_dim,
            realfake_hidden: self.head_hidden.clone(),
            bias_hidden: self.head_hidden.clone(),
            k_pattern: self.synth.k_pattern,
            activation: Activation::Relu,
            content_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutResult {
    pub held_out: u32,
    pub train_count: usize,
    pub test_count: usize,
    /// Accuracy on test reals plus test fakes of the trained-on patterns.
    pub in_pattern_acc: f64,
    /// Accuracy on test reals plus test fakes of the held-out pattern.
    pub held_out_acc: f64,
    /// Generator probe on the learned features of all test fakes.
    pub pattern_probe: ProbeResult,
    /// Content probe on the learned features of all test samples.
    pub content_probe: ProbeResult,
    pub epochs_run: usize,
    pub final_lambda: f64,
}

fn accuracy(scores: &[f64], labels: &[u8], rows: &[usize]) -> Result<f64> {
    let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
    let y: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
    let c = confusion_counts(&s, &y, DEFAULT_THRESHOLD)?;
    if c.total() == 0 {
        return Err(MaflError::Data("accuracy over an empty subset".into()));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

/// Removes every fake of generator `g` from `bundle`.
pub fn without_generator(bundle: &EmbeddingBundle, g: u32) -> Result<EmbeddingBundle> {
    let keep: Vec<usize> = (0..bundle.len())
        .filter(|&i| bundle.labels[i].generator_id != g as i32)
        .collect();
    bundle.subset(&keep)
}

/// Accuracies and probes of a trained model on a test bundle.
pub fn evaluate_held_out(
    model: &ModelState<f32>,
    test: &EmbeddingBundle,
    held_out: u32,
    k_content: usize,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<(f64, f64, ProbeResult, ProbeResult)> {
    let scores = model.fake_scores(&test.matrix)?;
    let auth = test.authenticity();
    let labels = &test.labels;
    let reals = (0..test.len()).filter(|&i| !labels[i].is_fake());
    let seen: Vec<usize> = (0..test.len())
        .filter(|&i| !labels[i].is_fake() || labels[i].generator_id != held_out as i32)
        .collect();
    let unseen: Vec<usize> = reals
        .chain((0..test.len()).filter(|&i| labels[i].generator_id == held_out as i32))
        .collect();
    let in_acc = accuracy(&scores, &auth, &seen)?;
    let ho_acc = accuracy(&scores, &auth, &unseen)?;

    let h = model.extract_features(&test.matrix)?;
    let fakes: Vec<usize> = (0..test.len()).filter(|&i| labels[i].is_fake()).collect();
    let gens: Vec<usize> = fakes.iter().map(|&i| labels[i].generator_id as usize).collect();
    let k = model.spec.k_pattern;
    let pattern = bias_leakage_probe(&h.select_rows(&fakes), &gens, k, seed, probe)?;
    let contents: Vec<usize> = labels.iter().map(|l| l.content_id as usize).collect();
    let content = bias_leakage_probe(&h, &contents, k_content, seed, probe)?;
    Ok((in_acc, ho_acc, pattern, content))
}

/// Data generation, split, training and evaluation for one configuration.
pub fn run_held_out(cfg: &HeldOutConfig) -> Result<HeldOutResult> {
    let g = cfg.held_out_pattern();
    if g as usize >= cfg.synth.k_pattern {
        return Err(MaflError::Config(format!(
            "held_out {g} outside [0, {})",
            cfg.synth.k_pattern
        )));
    }
    let data = synth_generate(&cfg.synth)?;
    let (train, val, test) = split_bundle(&data, cfg.split, cfg.synth.seed)?;
    let mut train = without_generator(&train, g)?;
    let val = without_generator(&val, g)?;
    if let Some(n) = cfg.train_subsample {
        train = subsample_bundle(&train, n, cfg.synth.seed)?;
    }
    let out = run_training(&cfg.train, &cfg.model_spec(), &train, &val)?;
    let (in_pattern_acc, held_out_acc, pattern_probe, content_probe) = evaluate_held_out(
        &out.best.model,
        &test,
        g,
        cfg.synth.k_content,
        &cfg.probe,
        cfg.synth.seed,
    )?;
    Ok(HeldOutResult {
        held_out: g,
        train_count: train.len(),
        test_count: test.len(),
        in_pattern_acc,
        held_out_acc,
        pattern_probe,
        content_probe,
        epochs_run: out.report.epochs.len(),
        final_lambda: out.report.epochs.last().map_or(0.0, |e| e.lambda),
    })
}
