//! Whole training runs: pretraining, epochs, validation-driven lr decay and
//! early stopping, and resumable state.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    adversarial_phase_step, bias_phase_step, lambda_schedule, validate_epoch, BatchData,
    BiasStep, Selection, TrainConfig,
};
use crate::data::{make_batches, EmbeddingBundle};
use crate::error::{MaflError, Result};
use crate::losses::LossBreakdown;
use crate::metrics::MetricSet;
use crate::model::{init_params, Checkpoint, Group, ModelSpec, ModelState};
use crate::numerics::rng::RngStream;
use crate::numerics::{plateau_scheduler_step, EarlyStopping, PlateauState};

/// File name the selected model is saved under.
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Pretraining epochs draw their batch orders from a separate range of
/// epoch ids so they never coincide with training epochs.
const PRETRAIN_EPOCH_TAG: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Bias,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDigests {
    pub extractor: String,
    pub realfake: String,
    pub bias: String,
}

impl GroupDigests {
    pub fn of(model: &ModelState<f32>) -> Self {
        Self {
            extractor: model.group_digest(Group::Extractor),
            realfake: model.group_digest(Group::Realfake),
            bias: model.group_digest(Group::Bias),
        }
    }

    pub fn get(&self, group: Group) -> &str {
        match group {
            Group::Extractor => &self.extractor,
            Group::Realfake => &self.realfake,
            Group::Bias => &self.bias,
        }
    }
}

/// Groups that must not change during an update of `phase`.
pub fn frozen_groups(phase: Phase) -> &'static [Group] {
    match phase {
        Phase::Pretrain | Phase::Bias => &[Group::Extractor, Group::Realfake],
        Phase::Adversarial => &[Group::Bias],
    }
}

/// One optimizer update, with parameter digests taken just before and just
/// after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepEvent {
    pub phase: Phase,
    /// Pretraining epoch for [`Phase::Pretrain`], training epoch otherwise.
    pub epoch: u32,
    pub batch: usize,
    pub update: u32,
    pub before: GroupDigests,
    pub after: GroupDigests,
}

/// Number of updates whose frozen groups were verified unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeAudit {
    pub bias_updates: u64,
    pub adversarial_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub epoch: u32,
    /// Mean over batches of the bias cross-entropy after the batch's last update.
    pub bias_ce: f64,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lambda: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Mean over batches of the adversarial-phase breakdown.
    pub losses: LossBreakdown,
    pub bias_ce: f64,
    pub val: MetricSet,
    pub skipped_bias_batches: usize,
    pub degenerate_alignment_batches: usize,
    /// SHA-256 over every parameter after the epoch.
    pub param_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub train_count: usize,
    pub val_count: usize,
    pub pretrain: Vec<PretrainRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the returned model.
    pub best_epoch: Option<u32>,
    pub best_val_acc: Option<f64>,
    pub stopped_early: bool,
    pub checkpoint: String,
    pub freeze_audit: Option<FreezeAudit>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| MaflError::json("train report", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lambda).collect()
    }
}

/// Loop state stored in a checkpoint so a run can continue exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopState {
    config: TrainConfig,
    pretrain: Vec<PretrainRecord>,
    epochs: Vec<EpochRecord>,
    plateau: PlateauState,
    early: EarlyStopping,
    stopped_early: bool,
    freeze_audit: Option<FreezeAudit>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// The selected model (per `TrainConfig::selection`).
    pub best: Checkpoint,
    /// The final state, including everything needed to resume.
    pub last: Checkpoint,
}

type Observer<'a> = Box<dyn FnMut(&StepEvent) + 'a>;

pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: &'a EmbeddingBundle,
    val: &'a EmbeddingBundle,
    ck: Checkpoint,
    best: Option<Checkpoint>,
    state: LoopState,
    observer: Option<Observer<'a>>,
}

fn params_digest(model: &ModelState<f32>) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    for p in model.all_params() {
        buf.clear();
        p.value.extend_le_bytes(&mut buf);
        hasher.update(&buf);
    }
    hex::encode(hasher.finalize())
}

fn check_data(spec: &ModelSpec, train: &EmbeddingBundle, val: &EmbeddingBundle) -> Result<()> {
    for (name, b) in [("training", train), ("validation", val)] {
        if b.is_empty() {
            return Err(MaflError::Data(format!("{name} set is empty")));
        }
        if b.dim() != spec.embed_dim {
            return Err(MaflError::dim(
                format!("{name} embedding dim"),
                spec.embed_dim,
                b.dim(),
            ));
        }
        for l in &b.labels {
            if l.is_fake() && l.generator_id as usize >= spec.k_pattern {
                return Err(MaflError::Label(format!(
                    "{name} row {}: generator_id {} outside [0, {})",
                    l.index, l.generator_id, spec.k_pattern
                )));
            }
            if let Some(k) = spec.content_classes {
                if l.content_id as usize >= k {
                    return Err(MaflError::Label(format!(
                        "{name} row {}: content_id {} outside [0, {k})",
                        l.index, l.content_id
                    )));
                }
            }
        }
    }
    if !train.labels.iter().any(|l| l.is_fake()) {
        return Err(MaflError::Data(
            "training set has no fake samples to train the bias head on".into(),
        ));
    }
    Ok(())
}

/// Verifies frozen groups and notifies the observer after one update.
fn track_update(
    prev: &mut Option<GroupDigests>,
    model: &ModelState<f32>,
    verify: bool,
    audit: &mut Option<FreezeAudit>,
    observer: &mut Option<Observer<'_>>,
    position: (Phase, u32, usize, u32),
) -> Result<()> {
    let Some(before) = prev.as_mut() else {
        return Ok(());
    };
    let (phase, epoch, batch, update) = position;
    let after = GroupDigests::of(model);
    if verify {
        for &g in frozen_groups(phase) {
            if before.get(g) != after.get(g) {
                return Err(MaflError::Contract(format!(
                    "{g} parameters changed during a {phase:?} update (epoch {epoch}, batch {batch}, update {update})"
                )));
            }
        }
        let a = audit.get_or_insert_with(FreezeAudit::default);
        match phase {
            Phase::Adversarial => a.adversarial_updates += 1,
            _ => a.bias_updates += 1,
        }
    }
    if let Some(obs) = observer.as_mut() {
        obs(&StepEvent {
            phase,
            epoch,
            batch,
            update,
            before: before.clone(),
            after: after.clone(),
        });
    }
    *before = after;
    Ok(())
}

impl<'a> Trainer<'a> {
    /// A fresh run with parameters initialized from `cfg.seed`.
    pub fn new(
        cfg: &TrainConfig,
        spec: &ModelSpec,
        train: &'a EmbeddingBundle,
        val: &'a EmbeddingBundle,
    ) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        check_data(spec, train, val)?;
        let model = init_params(spec, &RngStream::new(cfg.seed))?;
        let state = LoopState {
            config: cfg.clone(),
            pretrain: Vec::new(),
            epochs: Vec::new(),
            plateau: PlateauState::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr),
            early: EarlyStopping::new(cfg.early_stop_patience),
            stopped_early: false,
            freeze_audit: None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            train,
            val,
            ck: Checkpoint::fresh(model, cfg.adamw()),
            best: None,
            state,
            observer: None,
        })
    }

    /// Continues a run from the state saved by [`Trainer::checkpoint`].
    /// `best` is the previously selected model, required once one exists.
    pub fn resume(
        cfg: &TrainConfig,
        last: Checkpoint,
        best: Option<Checkpoint>,
        train: &'a EmbeddingBundle,
        val: &'a EmbeddingBundle,
    ) -> Result<Self> {
        let raw = last
            .resume
            .clone()
            .ok_or_else(|| MaflError::State("checkpoint carries no resume state".into()))?;
        let state: LoopState = serde_json::from_value(raw)
            .map_err(|e| MaflError::json("checkpoint resume state", e))?;
        if &state.config != cfg {
            return Err(MaflError::Config(
                "training config differs from the one the checkpoint was written with".into(),
            ));
        }
        check_data(&last.model.spec, train, val)?;
        let needs_best = cfg.selection == Selection::BestValAcc && state.early.best_epoch.is_some();
        if needs_best && best.is_none() {
            return Err(MaflError::State(
                "resuming a best-by-validation run needs the best checkpoint".into(),
            ));
        }
        let mut last = last;
        last.resume = None;
        last.rng = None;
        Ok(Self {
            cfg: cfg.clone(),
            train,
            val,
            ck: last,
            best: if needs_best { best } else { None },
            state,
            observer: None,
        })
    }

    /// Called after every optimizer update with before/after digests.
    pub fn set_observer(&mut self, f: impl FnMut(&StepEvent) + 'a) {
        self.observer = Some(Box::new(f));
    }

    pub fn model(&self) -> &ModelState<f32> {
        &self.ck.model
    }

    pub fn epochs_done(&self) -> usize {
        self.state.epochs.len()
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped_early || self.state.epochs.len() >= self.cfg.max_epochs as usize
    }

    fn tracking(&self) -> bool {
        self.cfg.verify_freezing || self.observer.is_some()
    }

    fn bias_phase(&mut self, batch: &BatchData<f32>, phase: Phase, epoch: u32, index: usize) -> Result<BiasStep> {
        let mut prev = self.tracking().then(|| GroupDigests::of(&self.ck.model));
        let verify = self.cfg.verify_freezing;
        let Self {
            ck,
            cfg,
            state,
            observer,
            ..
        } = self;
        bias_phase_step(ck, batch, cfg, |model, u| {
            track_update(&mut prev, model, verify, &mut state.freeze_audit, observer, (phase, epoch, index, u))
        })
    }

    fn adversarial_phase(&mut self, batch: &BatchData<f32>, epoch: u32, index: usize) -> Result<LossBreakdown> {
        let mut prev = self.tracking().then(|| GroupDigests::of(&self.ck.model));
        let verify = self.cfg.verify_freezing;
        let Self {
            ck,
            cfg,
            state,
            observer,
            ..
        } = self;
        adversarial_phase_step(ck, batch, epoch, cfg, |model, u| {
            track_update(
                &mut prev,
                model,
                verify,
                &mut state.freeze_audit,
                observer,
                (Phase::Adversarial, epoch, index, u),
            )
        })
    }

    /// Runs the remaining pretraining epochs of the bias group.
    pub fn pretrain(&mut self) -> Result<()> {
        while self.state.pretrain.len() < self.cfg.pretrain_epochs as usize {
            let e = self.state.pretrain.len() as u32;
            let batches = make_batches(
                &self.train.labels,
                self.cfg.batch_size,
                self.cfg.seed,
                PRETRAIN_EPOCH_TAG | e as u64,
                self.cfg.balanced_batches,
            )?;
            let (mut ce, mut used, mut skipped) = (0.0, 0usize, 0usize);
            for (i, b) in batches.iter().enumerate() {
                let data = BatchData::gather(self.train, b);
                let step = self.bias_phase(&data, Phase::Pretrain, e, i)?;
                if step.skipped {
                    skipped += 1;
                } else {
                    ce += step.last.pattern;
                    used += 1;
                }
            }
            let rec = PretrainRecord {
                epoch: e,
                bias_ce: if used > 0 { ce / used as f64 } else { 0.0 },
                skipped_batches: skipped,
            };
            log::debug!("pretrain epoch {e}: bias ce {:.4}", rec.bias_ce);
            self.state.pretrain.push(rec);
        }
        Ok(())
    }

    /// Runs one training epoch (pretraining first if still pending) and
    /// returns its record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        if self.is_finished() {
            return Err(MaflError::State("training has already finished".into()));
        }
        self.pretrain()?;
        let epoch = self.state.epochs.len() as u32;
        let lambda = lambda_schedule(epoch, &self.cfg);
        let lr = self.state.plateau.current_lr;
        let batches = make_batches(
            &self.train.labels,
            self.cfg.batch_size,
            self.cfg.seed,
            epoch as u64,
            self.cfg.balanced_batches,
        )?;

        let mut sum = LossBreakdown::default();
        let (mut bias_ce, mut bias_used, mut skipped, mut degenerate) = (0.0, 0usize, 0usize, 0usize);
        for (i, b) in batches.iter().enumerate() {
            let data = BatchData::gather(self.train, b);
            let step = self.bias_phase(&data, Phase::Bias, epoch, i)?;
            if step.skipped {
                skipped += 1;
            } else {
                bias_ce += step.last.pattern;
                bias_used += 1;
            }
            let br = self.adversarial_phase(&data, epoch, i)?;
            sum.cls += br.cls;
            sum.entropy += br.entropy;
            sum.alignment += br.alignment;
            sum.reverse += br.reverse;
            sum.adv += br.adv;
            sum.total += br.total;
            if br.alignment_degenerate {
                degenerate += 1;
            }
        }
        let nb = batches.len() as f64;
        let losses = LossBreakdown {
            cls: sum.cls / nb,
            entropy: sum.entropy / nb,
            alignment: sum.alignment / nb,
            reverse: sum.reverse / nb,
            adv: sum.adv / nb,
            total: sum.total / nb,
            lambda,
            alignment_degenerate: degenerate > 0,
        };

        let val = validate_epoch(&self.ck.model, self.val)?;
        self.ck.epoch = Some(epoch);
        if self.state.early.observe(epoch, val.acc) && self.cfg.selection == Selection::BestValAcc {
            let mut snap = self.ck.clone();
            snap.resume = None;
            self.best = Some(snap);
        }
        let next_lr = plateau_scheduler_step(&mut self.state.plateau, val.acc)?;
        self.ck.main_opt.set_lr(next_lr);
        self.ck.bias_opt.set_lr(next_lr);
        if self.cfg.early_stopping && self.state.early.should_stop() {
            self.state.stopped_early = true;
        }

        let rec = EpochRecord {
            epoch,
            lambda,
            lr,
            losses,
            bias_ce: if bias_used > 0 { bias_ce / bias_used as f64 } else { 0.0 },
            val,
            skipped_bias_batches: skipped,
            degenerate_alignment_batches: degenerate,
            param_digest: params_digest(&self.ck.model),
        };
        log::debug!(
            "epoch {epoch}: lambda {lambda:.3} cls {:.4} adv {:.4} val acc {:.4}",
            rec.losses.cls,
            rec.losses.adv,
            rec.val.acc
        );
        self.state.epochs.push(rec.clone());
        Ok(rec)
    }

    /// The current state with everything needed by [`Trainer::resume`].
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.ck.clone();
        ck.rng = Some(RngStream::new(self.cfg.seed).state());
        ck.resume = Some(
            serde_json::to_value(&self.state).map_err(|e| MaflError::json("resume state", e))?,
        );
        Ok(ck)
    }

    /// The currently selected model, if any epoch has completed.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        match self.cfg.selection {
            Selection::BestValAcc => self.best.as_ref(),
            Selection::FinalEpoch => self.state.epochs.last().map(|_| &self.ck),
        }
    }

    pub fn report(&self) -> TrainReport {
        let best_epoch = match self.cfg.selection {
            Selection::BestValAcc => self.state.early.best_epoch,
            Selection::FinalEpoch => self.state.epochs.last().map(|e| e.epoch),
        };
        TrainReport {
            config: self.cfg.clone(),
            spec: self.ck.model.spec.clone(),
            train_count: self.train.len(),
            val_count: self.val.len(),
            pretrain: self.state.pretrain.clone(),
            epochs: self.state.epochs.clone(),
            best_epoch,
            best_val_acc: best_epoch.map(|b| self.state.epochs[b as usize].val.acc),
            stopped_early: self.state.stopped_early,
            checkpoint: BEST_CHECKPOINT.to_string(),
            freeze_audit: self.state.freeze_audit,
        }
    }

    /// Runs to completion and returns the report with both checkpoints.
    pub fn finish(mut self) -> Result<TrainOutcome> {
        self.pretrain()?;
        while !self.is_finished() {
            self.run_epoch()?;
        }
        let last = self.checkpoint()?;
        let mut best = self
            .best_checkpoint()
            .cloned()
            .ok_or_else(|| MaflError::State("no epoch completed".into()))?;
        best.resume = None;
        Ok(TrainOutcome {
            report: self.report(),
            best,
            last,
        })
    }
}

/// Pretraining, then epochs until early stopping or `max_epochs`.
pub fn run_training(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    train: &EmbeddingBundle,
    val: &EmbeddingBundle,
) -> Result<TrainOutcome> {
    Trainer::new(cfg, spec, train, val)?.finish()
}
