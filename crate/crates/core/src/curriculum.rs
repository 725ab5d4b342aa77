//! Epoch-dependent loss weighting, staged freezing and the training loop.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Group, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Dataset, FusionModel};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleShape {
    Linear,
}

/// Loss-weight ramp and phase boundaries over `epochs` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumSchedule {
    pub epochs: usize,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub shape: ScheduleShape,
    /// First epoch of phase 2.
    pub p1_end: usize,
    /// First epoch of phase 3.
    pub p2_end: usize,
}

impl CurriculumSchedule {
    /// Defaults: λ from 0.3 to 1.0, phase boundaries at `E/3` and `2E/3`
    /// (raised as needed so every phase boundary stays valid for small `E`).
    pub fn new(epochs: usize) -> Result<Self> {
        let p1 = (epochs / 3).max(1);
        Self::with_phases(epochs, p1, (2 * epochs / 3).max(p1 + 1))
    }

    pub fn with_phases(epochs: usize, p1_end: usize, p2_end: usize) -> Result<Self> {
        let s = Self {
            epochs,
            lambda_start: 0.3,
            lambda_end: 1.0,
            shape: ScheduleShape::Linear,
            p1_end,
            p2_end,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 2 {
            return Err(Error::Config(format!(
                "a curriculum needs at least 2 epochs, got {}",
                self.epochs
            )));
        }
        if !(0 < self.p1_end && self.p1_end < self.p2_end && self.p2_end <= self.epochs) {
            return Err(Error::Config(format!(
                "phase boundaries must satisfy 0 < {} < {} <= {}",
                self.p1_end, self.p2_end, self.epochs
            )));
        }
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.lambda_start) || !ok(self.lambda_end) || self.lambda_start > self.lambda_end {
            return Err(Error::Config(format!(
                "loss weight ramp {} -> {} must be nondecreasing within [0, 1]",
                self.lambda_start, self.lambda_end
            )));
        }
        Ok(())
    }

    fn check_epoch(&self, epoch: usize) -> Result<()> {
        if epoch >= self.epochs {
            return Err(Error::Range {
                epoch,
                epochs: self.epochs,
            });
        }
        Ok(())
    }

    /// Weight of the fused loss term at `epoch`.
    pub fn lambda_at(&self, epoch: usize) -> Result<f64> {
        self.check_epoch(epoch)?;
        let t = epoch as f64 / (self.epochs - 1) as f64;
        // Endpoint form keeps λ(0) and λ(E−1) exact.
        Ok(match self.shape {
            ScheduleShape::Linear => self.lambda_start * (1.0 - t) + self.lambda_end * t,
        })
    }

    pub fn phase_at(&self, epoch: usize) -> Result<Phase> {
        self.check_epoch(epoch)?;
        Ok(if epoch < self.p1_end {
            Phase::TextFrozen
        } else if epoch < self.p2_end {
            Phase::Joint
        } else {
            Phase::HeadsOnly
        })
    }

    pub fn stage_for_epoch(&self, epoch: usize) -> Result<FreezeMask> {
        Ok(self.phase_at(epoch)?.mask())
    }
}

pub fn lambda_at(schedule: &CurriculumSchedule, epoch: usize) -> Result<f64> {
    schedule.lambda_at(epoch)
}

pub fn stage_for_epoch(schedule: &CurriculumSchedule, epoch: usize) -> Result<FreezeMask> {
    schedule.stage_for_epoch(epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Text encoder frozen; everything else trains.
    TextFrozen,
    Joint,
    /// Both encoders frozen; projection, confidence and classifier train.
    HeadsOnly,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::TextFrozen => 1,
            Phase::Joint => 2,
            Phase::HeadsOnly => 3,
        }
    }

    pub fn mask(self) -> FreezeMask {
        match self {
            Phase::TextFrozen => FreezeMask::all_trainable().freeze(Group::TextEncoder),
            Phase::Joint => FreezeMask::all_trainable(),
            Phase::HeadsOnly => FreezeMask::all_trainable()
                .freeze(Group::VisualEncoder)
                .freeze(Group::TextEncoder),
        }
    }
}

/// Trainable flag per parameter group. Adapters follow the text encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeMask {
    trainable: [bool; 5],
}

impl FreezeMask {
    pub fn all_trainable() -> Self {
        Self { trainable: [true; 5] }
    }

    fn slot(group: Group) -> usize {
        match group {
            Group::VisualEncoder => 0,
            Group::TextEncoder | Group::Adapter => 1,
            Group::Projection => 2,
            Group::Confidence => 3,
            Group::Classifier => 4,
        }
    }

    pub fn freeze(mut self, group: Group) -> Self {
        self.trainable[Self::slot(group)] = false;
        self
    }

    pub fn is_trainable(&self, group: Group) -> bool {
        self.trainable[Self::slot(group)]
    }

    pub fn frozen_groups(&self) -> Vec<Group> {
        Group::MODEL_GROUPS
            .iter()
            .copied()
            .filter(|&g| !self.is_trainable(g))
            .collect()
    }
}

/// `λ·mean CE(fused) + (1 − λ)·mean CE(image)` on the tape.
pub fn total_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    fused_logits: Var,
    image_logits: Var,
    labels: &[usize],
    lambda: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("loss weight {lambda} outside [0, 1]")));
    }
    let cf = tape.cross_entropy(fused_logits, labels)?;
    let cf = tape.mean(cf);
    if lambda == 1.0 {
        return Ok(cf);
    }
    let ci = tape.cross_entropy(image_logits, labels)?;
    let ci = tape.mean(ci);
    if lambda == 0.0 {
        return Ok(ci);
    }
    let a = tape.scale(cf, S::of(lambda));
    let b = tape.scale(ci, S::of(1.0 - lambda));
    tape.add(a, b)
}

/// Eager form of [`total_loss_var`].
pub fn total_loss<S: Scalar>(fused_logits: &Tensor<S>, image_logits: &Tensor<S>, labels: &[usize], lambda: f64) -> Result<S> {
    let mut tape = Tape::new();
    let (f, i) = (tape.constant(fused_logits.clone()), tape.constant(image_logits.clone()));
    let l = total_loss_var(&mut tape, f, i, labels, lambda)?;
    Ok(tape.scalar(l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            epochs: 150,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    /// 1–3, or 0 when training without a curriculum.
    pub phase: u8,
    pub train_loss: f64,
    /// `None` without a validation set.
    pub val_acc: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lambda={:.6} phase={} train_loss={:.6} val_acc=",
            self.epoch, self.lambda, self.phase, self.train_loss
        )?;
        match self.val_acc {
            Some(a) => write!(f, "{a:.6}"),
            None => f.write_str("nan"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

impl fmt::Display for TrainLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Passed to the step observer after every optimizer update.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub epoch: usize,
    pub batch: usize,
    pub phase: u8,
    pub mask: FreezeMask,
    pub loss: f64,
}

/// Trains `model` on `train`. Without a schedule the fused loss alone is used
/// and every group trains in every epoch.
pub fn train<S: Scalar>(
    config: &TrainConfig,
    schedule: Option<&CurriculumSchedule>,
    model: &mut FusionModel<S>,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<TrainLog> {
    train_with_observer(config, schedule, model, train, val, |_, _| {})
}

pub fn train_with_observer<S: Scalar>(
    config: &TrainConfig,
    schedule: Option<&CurriculumSchedule>,
    model: &mut FusionModel<S>,
    train: &Dataset,
    val: Option<&Dataset>,
    mut observer: impl FnMut(&StepInfo, &ParamStore<S>),
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if let Some(s) = schedule {
        s.validate()?;
        if s.epochs != config.epochs {
            return Err(Error::Config(format!(
                "schedule covers {} epochs, training runs {}",
                s.epochs, config.epochs
            )));
        }
    }
    let mut adam = Adam::new(config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let (lambda, phase, mask) = match schedule {
            Some(s) => {
                let p = s.phase_at(epoch)?;
                (s.lambda_at(epoch)?, p.number(), p.mask())
            }
            None => (1.0, 0, FreezeMask::all_trainable()),
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| train.label(i)).collect();
            let mut tape = Tape::new();
            let vars = model.forward(&mut tape, train, idx)?;
            let loss = total_loss_var(&mut tape, vars.fused_logits, vars.image_logits, &labels, lambda)?;
            let value = tape.scalar(loss).to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?;
            adam.step(&mut model.store, &grads, |g| mask.is_trainable(g));
            loss_sum += value * idx.len() as f64;
            observer(
                &StepInfo {
                    epoch,
                    batch,
                    phase,
                    mask,
                    loss: value,
                },
                &model.store,
            );
        }
        let val_acc = match val {
            Some(v) if !v.is_empty() => Some(model.accuracy(v)?),
            _ => None,
        };
        log.records.push(EpochRecord {
            epoch,
            lambda,
            phase,
            train_loss: loss_sum / train.len() as f64,
            val_acc,
        });
    }
    Ok(log)
}
