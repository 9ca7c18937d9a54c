//! The alternating adversarial schedule: bias-head pretraining, then per batch
//! a bias phase (main networks frozen) followed by an adversarial phase (bias
//! group frozen).

mod trainer;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, EmbeddingBundle};
use crate::error::{MaflError, Result};
use crate::losses::{
    combine_adversarial, cross_entropy, entropy_max_loss, feature_alignment_loss,
    label_reversal_loss, real_fake_loss, total_loss, AdvLossWeights, LossBreakdown,
};
use crate::metrics::{metric_set, MetricSet};
use crate::model::{Checkpoint, Group, ModelState};
use crate::numerics::{AdamWConfig, Matrix, Real};

pub use trainer::{
    run_training, frozen_groups, BEST_CHECKPOINT, EpochRecord, FreezeAudit, GroupDigests, Phase, PretrainRecord, StepEvent,
    TrainOutcome, TrainReport, Trainer,
};

/// Which adversarial terms are active. All off is the plain classifier
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossToggles {
    pub entropy: bool,
    pub alignment: bool,
    pub reverse: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self::ALL_ON
    }
}

impl LossToggles {
    pub const ALL_ON: Self = Self {
        entropy: true,
        alignment: true,
        reverse: true,
    };
    pub const ALL_OFF: Self = Self {
        entropy: false,
        alignment: false,
        reverse: false,
    };

    pub fn any(&self) -> bool {
        self.entropy || self.alignment || self.reverse
    }

    /// Applies `name=on|off` assignments, comma separated.
    pub fn apply(&mut self, assignments: &str) -> Result<()> {
        for item in assignments.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item.split_once('=').ok_or_else(|| {
                MaflError::Config(format!("toggle '{item}' must look like name=on or name=off"))
            })?;
            let flag = match value.trim() {
                "on" | "true" | "1" => true,
                "off" | "false" | "0" => false,
                other => {
                    return Err(MaflError::Config(format!(
                        "toggle {name}: expected on/off, got '{other}'"
                    )))
                }
            };
            match name.trim() {
                "entropy" => self.entropy = flag,
                "alignment" => self.alignment = flag,
                "reverse" => self.reverse = flag,
                other => {
                    return Err(MaflError::Config(format!(
                        "unknown toggle '{other}' (expected entropy, alignment or reverse)"
                    )))
                }
            }
        }
        Ok(())
    }
}

impl FromStr for LossToggles {
    type Err = MaflError;

    /// Parses assignments on top of the all-on default.
    fn from_str(s: &str) -> Result<Self> {
        let mut t = Self::ALL_ON;
        t.apply(s)?;
        Ok(t)
    }
}

/// Which model a finished run returns as its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest validation accuracy, earliest epoch on ties.
    BestValAcc,
    FinalEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: u32,
    pub early_stopping: bool,
    pub early_stop_patience: u32,
    pub pretrain_epochs: u32,
    pub bias_updates_per_batch: u32,
    pub main_updates_per_batch: u32,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_cap: f64,
    pub lambda_rate: f64,
    pub lambda_denom: f64,
    pub loss_toggles: LossToggles,
    pub plateau_factor: f64,
    pub plateau_patience: u32,
    pub min_lr: f64,
    pub balanced_batches: bool,
    pub selection: Selection,
    /// Hash every parameter group around every optimizer step and fail on
    /// any change to a frozen group.
    pub verify_freezing: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 256,
            max_epochs: 100,
            early_stopping: true,
            early_stop_patience: 10,
            pretrain_epochs: 5,
            bias_updates_per_batch: 3,
            main_updates_per_batch: 1,
            alpha: 0.5,
            beta: 0.3,
            lambda_cap: 0.5,
            lambda_rate: 0.1,
            lambda_denom: 10.0,
            loss_toggles: LossToggles::ALL_ON,
            plateau_factor: 0.5,
            plateau_patience: 5,
            min_lr: 0.0,
            balanced_batches: false,
            selection: Selection::BestValAcc,
            verify_freezing: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lambda_denom", self.lambda_denom),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MaflError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("weight_decay", self.weight_decay),
            ("lambda_cap", self.lambda_cap),
            ("lambda_rate", self.lambda_rate),
            ("min_lr", self.min_lr),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MaflError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(MaflError::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(MaflError::Config(format!(
                "plateau_factor must be in (0, 1], got {}",
                self.plateau_factor
            )));
        }
        if self.batch_size < 2 {
            return Err(MaflError::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.max_epochs == 0 {
            return Err(MaflError::Config("max_epochs must be >= 1".into()));
        }
        if self.early_stopping && self.early_stop_patience == 0 {
            return Err(MaflError::Config("early_stop_patience must be >= 1".into()));
        }
        if self.main_updates_per_batch == 0 {
            return Err(MaflError::Config("main_updates_per_batch must be >= 1".into()));
        }
        self.weights().validate()
    }

    pub fn weights(&self) -> AdvLossWeights {
        AdvLossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// `min(cap, rate / denom · epoch)`; with defaults `min(0.5, 0.01·epoch)`.
/// Epoch 0 is the first epoch after pretraining.
pub fn lambda_schedule(epoch: u32, cfg: &TrainConfig) -> f64 {
    (cfg.lambda_rate / cfg.lambda_denom * epoch as f64).min(cfg.lambda_cap)
}

/// One mini-batch in the form the objectives consume.
#[derive(Debug, Clone)]
pub struct BatchData<T: Real = f32> {
    pub x: Matrix<T>,
    pub authenticity: Vec<u8>,
    /// Row positions of fake samples within `x`.
    pub fake_positions: Vec<usize>,
    /// Generator label of each fake, aligned with `fake_positions`.
    pub generators: Vec<usize>,
    /// Content label of every row.
    pub contents: Vec<usize>,
}

impl BatchData<f32> {
    pub fn gather(bundle: &EmbeddingBundle, batch: &Batch) -> Self {
        let labels = &bundle.labels;
        Self {
            x: bundle.matrix.select_rows(&batch.indices),
            authenticity: batch.indices.iter().map(|&i| labels[i].authenticity).collect(),
            fake_positions: batch.fake_positions.clone(),
            generators: batch
                .fake_positions
                .iter()
                .map(|&p| labels[batch.indices[p]].generator_id as usize)
                .collect(),
            contents: batch
                .indices
                .iter()
                .map(|&i| labels[i].content_id as usize)
                .collect(),
        }
    }
}

impl<T: Real> BatchData<T> {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn cast<U: Real>(&self) -> BatchData<U> {
        BatchData {
            x: self.x.cast(),
            authenticity: self.authenticity.clone(),
            fake_positions: self.fake_positions.clone(),
            generators: self.generators.clone(),
            contents: self.contents.clone(),
        }
    }
}

/// The terms of the main objective that are switched on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// Include the real/fake cross-entropy.
    pub cls: bool,
    pub toggles: LossToggles,
    pub lambda: f64,
    pub weights: AdvLossWeights,
}

fn scatter_add<T: Real>(dst: &mut Matrix<T>, rows: &[usize], src: &Matrix<T>, scale: f64) {
    for (i, &r) in rows.iter().enumerate() {
        for (d, &s) in dst.row_mut(r).iter_mut().zip(src.row(i)) {
            *d = T::from_f64(d.as_f64() + scale * s.as_f64());
        }
    }
}

fn scaled<T: Real>(m: &Matrix<T>, s: f64) -> Matrix<T> {
    let mut out = m.clone();
    out.scale(T::from_f64(s));
    out
}

/// Evaluates `cls + λ·adv` on one batch and accumulates its gradient into
/// every trainable parameter.
///
/// The adversarial terms act on fake rows through the bias head, which
/// should be frozen: it still passes gradients back to the features but
/// collects none itself. With a content head, its entropy and reversal terms
/// over every row's content label are added to the pattern terms.
pub fn adversarial_objective<T: Real>(
    model: &mut ModelState<T>,
    batch: &BatchData<T>,
    terms: &ObjectiveTerms,
) -> Result<LossBreakdown> {
    let n = batch.len();
    if n == 0 {
        return Err(MaflError::Input("adversarial objective on an empty batch".into()));
    }
    let lambda = terms.lambda;
    let t = terms.toggles;
    let h = model.extractor.forward_record(&batch.x)?;
    let mut g_h = Matrix::<T>::zeros(n, h.cols());
    let mut backprop = false;
    let mut out = LossBreakdown {
        lambda,
        ..Default::default()
    };

    if terms.cls {
        let logits = model.realfake.forward_record(&h)?;
        let rf = real_fake_loss(&logits, &batch.authenticity)?;
        out.cls = rf.value;
        g_h = model.realfake.backward(&rf.grad)?;
        backprop = true;
    }

    let fakes = &batch.fake_positions;
    if !fakes.is_empty() && (t.entropy || t.reverse || t.alignment) {
        let hf = h.select_rows(fakes);
        if t.entropy || t.reverse {
            let z = model.bias.forward_record(&hf)?;
            let mut g_z = Matrix::<T>::zeros(z.rows(), z.cols());
            if t.entropy {
                let e = entropy_max_loss(&z)?;
                out.entropy += e.value;
                g_z.axpy(T::one(), &e.grad)?;
            }
            if t.reverse {
                let r = label_reversal_loss(&z, &batch.generators)?;
                out.reverse += r.value;
                g_z.axpy(T::from_f64(terms.weights.beta), &r.grad)?;
            }
            if lambda != 0.0 {
                let g_hf = model.bias.backward(&scaled(&g_z, lambda))?;
                scatter_add(&mut g_h, fakes, &g_hf, 1.0);
                backprop = true;
            }
        }
        if t.alignment {
            let a = feature_alignment_loss(&hf)?;
            out.alignment = a.value;
            out.alignment_degenerate = a.degenerate;
            if lambda != 0.0 && !a.degenerate {
                scatter_add(&mut g_h, fakes, &a.grad, lambda * terms.weights.alpha);
                backprop = true;
            }
        }
    } else if t.alignment {
        out.alignment_degenerate = true;
    }

    if let (Some(content), true) = (model.content.as_mut(), t.entropy || t.reverse) {
        let zc = content.forward_record(&h)?;
        let mut g_z = Matrix::<T>::zeros(zc.rows(), zc.cols());
        if t.entropy {
            let e = entropy_max_loss(&zc)?;
            out.entropy += e.value;
            g_z.axpy(T::one(), &e.grad)?;
        }
        if t.reverse {
            let r = label_reversal_loss(&zc, &batch.contents)?;
            out.reverse += r.value;
            g_z.axpy(T::from_f64(terms.weights.beta), &r.grad)?;
        }
        if lambda != 0.0 {
            let g = content.backward(&scaled(&g_z, lambda))?;
            g_h.axpy(T::one(), &g)?;
            backprop = true;
        }
    }

    if backprop {
        model.extractor.backward(&g_h)?;
    }
    out.adv = combine_adversarial(out.entropy, out.alignment, out.reverse, &terms.weights);
    out.total = total_loss(out.cls, out.adv, lambda);
    Ok(out)
}

/// Cross-entropy values of the bias group on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasLoss {
    pub pattern: f64,
    pub content: Option<f64>,
}

/// Bias-phase objective: generator cross-entropy of the bias head on the
/// fake rows of `h` (plus content cross-entropy of the content head over all
/// rows). Accumulates gradients into the bias group only; `h` is treated as
/// a constant.
pub fn bias_objective<T: Real>(
    model: &mut ModelState<T>,
    h: &Matrix<T>,
    batch: &BatchData<T>,
) -> Result<BiasLoss> {
    let hf = h.select_rows(&batch.fake_positions);
    let z = model.bias.forward_record(&hf)?;
    let ce = cross_entropy(&z, &batch.generators)?;
    model.bias.backward(&ce.grad)?;
    let content = match model.content.as_mut() {
        Some(c) => {
            let zc = c.forward_record(h)?;
            let cc = cross_entropy(&zc, &batch.contents)?;
            c.backward(&cc.grad)?;
            Some(cc.value)
        }
        None => None,
    };
    Ok(BiasLoss {
        pattern: ce.value,
        content,
    })
}

/// Freezes the main networks and unfreezes the bias group.
pub fn enter_bias_phase<T: Real>(model: &mut ModelState<T>) {
    model.set_trainable(Group::Extractor, false);
    model.set_trainable(Group::Realfake, false);
    model.set_trainable(Group::Bias, true);
}

/// Freezes the bias group and unfreezes the main networks.
pub fn enter_adversarial_phase<T: Real>(model: &mut ModelState<T>) {
    model.set_trainable(Group::Extractor, true);
    model.set_trainable(Group::Realfake, true);
    model.set_trainable(Group::Bias, false);
}

/// Outcome of one bias phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasStep {
    /// No fake samples: nothing was updated.
    pub skipped: bool,
    /// Loss at each update, before that update was applied.
    pub first: BiasLoss,
    pub last: BiasLoss,
}

/// `bias_updates_per_batch` optimizer steps of the bias group on one batch,
/// with features computed once by the frozen extractor.
///
/// `on_update` runs after each optimizer step.
pub fn bias_phase_step(
    ck: &mut Checkpoint,
    batch: &BatchData<f32>,
    cfg: &TrainConfig,
    mut on_update: impl FnMut(&ModelState<f32>, u32) -> Result<()>,
) -> Result<BiasStep> {
    let mut out = BiasStep {
        skipped: true,
        first: BiasLoss::default(),
        last: BiasLoss::default(),
    };
    if batch.fake_positions.is_empty() || cfg.bias_updates_per_batch == 0 {
        return Ok(out);
    }
    out.skipped = false;
    enter_bias_phase(&mut ck.model);
    let h = ck.model.extract_features(&batch.x)?;
    for u in 0..cfg.bias_updates_per_batch {
        ck.model.zero_grad();
        let loss = bias_objective(&mut ck.model, &h, batch)?;
        if u == 0 {
            out.first = loss;
        }
        out.last = loss;
        ck.bias_opt.step(ck.model.group_params_mut(Group::Bias))?;
        on_update(&ck.model, u)?;
    }
    Ok(out)
}

/// `main_updates_per_batch` optimizer steps of the extractor and real/fake
/// head on `cls + λ(epoch)·adv`. Returns the breakdown of the first update.
pub fn adversarial_phase_step(
    ck: &mut Checkpoint,
    batch: &BatchData<f32>,
    epoch: u32,
    cfg: &TrainConfig,
    mut on_update: impl FnMut(&ModelState<f32>, u32) -> Result<()>,
) -> Result<LossBreakdown> {
    let terms = ObjectiveTerms {
        cls: true,
        toggles: cfg.loss_toggles,
        lambda: lambda_schedule(epoch, cfg),
        weights: cfg.weights(),
    };
    enter_adversarial_phase(&mut ck.model);
    let mut first = None;
    for u in 0..cfg.main_updates_per_batch {
        ck.model.zero_grad();
        let b = adversarial_objective(&mut ck.model, batch, &terms)?;
        first.get_or_insert(b);
        let model = &mut ck.model;
        let ModelState {
            extractor,
            realfake,
            ..
        } = model;
        ck.main_opt
            .step(extractor.params_mut().chain(realfake.params_mut()))?;
        on_update(&ck.model, u)?;
    }
    Ok(first.expect("at least one main update"))
}

/// Real/fake metrics of `model` on `val`, at threshold 0.5. Read-only.
pub fn validate_epoch(model: &ModelState<f32>, val: &EmbeddingBundle) -> Result<MetricSet> {
    if val.is_empty() {
        return Err(MaflError::Data("validation set is empty".into()));
    }
    let scores = model.fake_scores(&val.matrix)?;
    metric_set(&scores, &val.authenticity())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelSpec};
    use crate::numerics::rng::RngStream;

    fn spec() -> ModelSpec {
        ModelSpec {
            embed_dim: 6,
            hidden_dims_g: vec![5],
            feature_dim: 4,
            realfake_hidden: vec![3],
            bias_hidden: vec![3],
            k_pattern: 3,
            activation: crate::numerics::Activation::Relu,
            content_classes: None,
        }
    }

    fn batch(seed: u64, n: usize) -> BatchData<f32> {
        let mut rng = RngStream::new(seed);
        let x = Matrix::from_fn(n, 6, |_, _| rng.normal() as f32);
        let authenticity: Vec<u8> = (0..n).map(|i| (i % 3 != 0) as u8).collect();
        let fake_positions: Vec<usize> = (0..n).filter(|&i| authenticity[i] == 1).collect();
        let generators = fake_positions.iter().map(|&p| p % 3).collect();
        BatchData {
            x,
            authenticity,
            fake_positions,
            generators,
            contents: (0..n).map(|i| i % 2).collect(),
        }
    }

    #[test]
    fn lambda_table() {
        let cfg = TrainConfig::default();
        assert_eq!(lambda_schedule(0, &cfg), 0.0);
        assert_eq!(lambda_schedule(20, &cfg), 0.2);
        assert_eq!(lambda_schedule(50, &cfg), 0.5);
        assert_eq!(lambda_schedule(99, &cfg), 0.5);
        for e in 0..=100u32 {
            assert_eq!(lambda_schedule(e, &cfg), (0.01 * e as f64).min(0.5));
        }
    }

    #[test]
    fn toggles_parse() {
        let t: LossToggles = "entropy=off, reverse=off".parse().unwrap();
        assert_eq!(
            t,
            LossToggles {
                entropy: false,
                alignment: true,
                reverse: false
            }
        );
        assert!("entropy".parse::<LossToggles>().is_err());
        assert!("colour=off".parse::<LossToggles>().is_err());
        assert!("entropy=maybe".parse::<LossToggles>().is_err());
    }

    #[test]
    fn config_round_trip_and_strictness() {
        let cfg = TrainConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lrr": 1.0}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"max_epochs": 3}"#).unwrap();
        assert_eq!(partial.max_epochs, 3);
        assert_eq!(partial.batch_size, 256);
        assert!(TrainConfig { batch_size: 1, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn breakdown_identities_hold() {
        let mut m: ModelState<f32> = init_params(&spec(), &RngStream::new(1)).unwrap();
        enter_adversarial_phase(&mut m);
        let terms = ObjectiveTerms {
            cls: true,
            toggles: LossToggles::ALL_ON,
            lambda: 0.3,
            weights: AdvLossWeights::default(),
        };
        let b = adversarial_objective(&mut m, &batch(2, 12), &terms).unwrap();
        assert!((b.adv - (b.entropy + 0.5 * b.alignment + 0.3 * b.reverse)).abs() < 1e-6);
        assert!((b.total - (b.cls + 0.3 * b.adv)).abs() < 1e-6);
        assert!(b.entropy > 0.0 && b.alignment > 0.0 && b.reverse > 0.0);
    }

    #[test]
    fn toggles_off_equals_plain_cross_entropy_step() {
        let base: ModelState<f32> = init_params(&spec(), &RngStream::new(3)).unwrap();
        let b = batch(4, 10);
        let run = |toggles: LossToggles, lambda: f64| {
            let mut m = base.clone();
            enter_adversarial_phase(&mut m);
            m.zero_grad();
            let terms = ObjectiveTerms {
                cls: true,
                toggles,
                lambda,
                weights: AdvLossWeights::default(),
            };
            let out = adversarial_objective(&mut m, &b, &terms).unwrap();
            (out, m)
        };
        let (off, m_off) = run(LossToggles::ALL_OFF, 0.5);
        let (zero, m_zero) = run(LossToggles::ALL_ON, 0.0);
        assert_eq!(off.adv, 0.0);
        assert_eq!(off.total, off.cls);
        for (a, b) in m_off.all_params().iter().zip(m_zero.all_params()) {
            assert_eq!(a.grad, b.grad);
        }
        assert_eq!(zero.cls, off.cls);
    }

    #[test]
    fn frozen_bias_head_passes_gradient_to_extractor() {
        let mut m: ModelState<f32> = init_params(&spec(), &RngStream::new(5)).unwrap();
        enter_adversarial_phase(&mut m);
        let terms = ObjectiveTerms {
            cls: false,
            toggles: LossToggles {
                entropy: true,
                alignment: false,
                reverse: false,
            },
            lambda: 1.0,
            weights: AdvLossWeights::default(),
        };
        adversarial_objective(&mut m, &batch(6, 12), &terms).unwrap();
        let g: f64 = m
            .group_params(Group::Extractor)
            .iter()
            .flat_map(|p| p.grad.as_slice())
            .map(|v| v.abs() as f64)
            .sum();
        assert!(g > 0.0);
        for p in m.group_params(Group::Bias) {
            assert!(p.grad.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bias_phase_reduces_ce_and_keeps_main_networks() {
        let model: ModelState<f32> = init_params(&spec(), &RngStream::new(7)).unwrap();
        let cfg = TrainConfig {
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let mut ck = Checkpoint::fresh(model, cfg.adamw());
        let b = batch(8, 24);
        let before = (
            ck.model.group_digest(Group::Extractor),
            ck.model.group_digest(Group::Realfake),
        );
        let first = bias_phase_step(&mut ck, &b, &cfg, |_, _| Ok(())).unwrap().first;
        let mut last = first;
        for _ in 0..33 {
            last = bias_phase_step(&mut ck, &b, &cfg, |_, _| Ok(())).unwrap().last;
        }
        assert!(last.pattern < first.pattern, "{last:?} vs {first:?}");
        assert_eq!(ck.model.group_digest(Group::Extractor), before.0);
        assert_eq!(ck.model.group_digest(Group::Realfake), before.1);
        assert_eq!(ck.bias_opt.states[0].step_count, 102);
    }

    #[test]
    fn bias_phase_without_fakes_is_a_noop() {
        let model: ModelState<f32> = init_params(&spec(), &RngStream::new(9)).unwrap();
        let mut ck = Checkpoint::fresh(model, AdamWConfig::default());
        let mut b = batch(1, 6);
        b.fake_positions.clear();
        b.generators.clear();
        b.authenticity.fill(0);
        let digest = ck.model.group_digest(Group::Bias);
        let out = bias_phase_step(&mut ck, &b, &TrainConfig::default(), |_, _| Ok(())).unwrap();
        assert!(out.skipped);
        assert_eq!(ck.model.group_digest(Group::Bias), digest);
    }

    #[test]
    fn adversarial_phase_keeps_bias_group() {
        let mut s = spec();
        s.content_classes = Some(2);
        let model: ModelState<f32> = init_params(&s, &RngStream::new(11)).unwrap();
        let mut ck = Checkpoint::fresh(model, AdamWConfig::default());
        let digest = ck.model.group_digest(Group::Bias);
        let ext = ck.model.group_digest(Group::Extractor);
        adversarial_phase_step(&mut ck, &batch(12, 12), 30, &TrainConfig::default(), |_, _| Ok(()))
            .unwrap();
        assert_eq!(ck.model.group_digest(Group::Bias), digest);
        assert_ne!(ck.model.group_digest(Group::Extractor), ext);
    }
}
