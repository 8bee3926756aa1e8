//! Hard-label pretraining and the soft-label distillation loop.
//!
//! The distillation step, in order: augment the batch; score the identical
//! pixels with the frozen ensemble; update the student on the soft-label
//! cross-entropy (plus `adv_weight` times the adversarial term when the
//! discriminator is on); then update the discriminator on the same batch's
//! teacher and (detached) student logits.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use log::{debug, info};
use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fingerprint, CheckpointBundle, CheckpointKind, RngState};
use crate::data::{chunks, epoch_permutation, eval_batch, train_batch, Dataset, ImageSource};
use crate::discriminator::{Discriminator, DiscriminatorSpec};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::losses::{ce_loss_with_grad, hard_label_ce_with_grad, kl_loss};
use crate::nets::{build_model, Model, ModelSpec};
use crate::nn::Sgd;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tensor::{top_k, ImageBatch, LogitBatch};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Random,
    HardLabelPretrained,
    /// A longer hard-label pretraining run.
    Superior,
}

/// Step decay: `lr_init * decay^(number of milestones <= epoch)`.
pub fn step_lr(lr_init: f64, milestones: &[usize], decay: f64, epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    lr_init * decay.powi(passed as i32)
}

/// Milestone at the same fraction of training as 100 of 180 epochs.
pub fn scaled_milestone(total_epochs: usize) -> usize {
    (total_epochs as f64 / 1.8).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub total_epochs: usize,
    pub lr_init: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub adv_weight: f64,
    pub discriminator_enabled: bool,
    pub discriminator_hidden: [usize; 2],
    pub init_mode: InitMode,
    pub use_hard_labels_in_distill: bool,
    pub seed: u64,
    /// Also measure top-1 on (up to this many) training images each epoch.
    pub train_eval_samples: usize,
    /// Hash the pixels seen by teachers and student at every step and fail on mismatch.
    pub verify_crop_consistency: bool,
}

impl Default for DistillConfig {
    /// Desk-scale recipe: 90 epochs, decay x0.1 at epoch 50, no weight decay.
    fn default() -> Self {
        Self::with_epochs(90)
    }
}

impl DistillConfig {
    /// Default recipe with the milestone rescaled to `total_epochs`.
    pub fn with_epochs(total_epochs: usize) -> Self {
        Self {
            total_epochs,
            lr_init: 0.01,
            lr_milestones: vec![scaled_milestone(total_epochs)],
            lr_decay: 0.1,
            batch_size: 128,
            weight_decay: 0.0,
            momentum: 0.9,
            adv_weight: 0.1,
            discriminator_enabled: true,
            discriminator_hidden: [128, 64],
            init_mode: InitMode::HardLabelPretrained,
            use_hard_labels_in_distill: false,
            seed: 0,
            train_eval_samples: 0,
            verify_crop_consistency: false,
        }
    }

    /// The full-scale schedule: 180 epochs, milestone at 100, batch 512.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 512,
            ..Self::with_epochs(180)
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(self.lr_init, &self.lr_milestones, self.lr_decay, epoch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!("lr_init must be positive, got {}", self.lr_init)));
        }
        if self.weight_decay < 0.0 || self.adv_weight < 0.0 {
            return Err(Error::Config("weight_decay and adv_weight must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn lr_at(config: &DistillConfig, epoch: usize) -> f64 {
    config.lr_at(epoch)
}

/// Hard-label SGD recipe for teachers, baselines and student initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    pub train_eval_samples: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self::with_epochs(30)
    }
}

impl PretrainConfig {
    pub fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            lr_init: 0.05,
            lr_milestones: vec![epochs.div_ceil(2), (epochs * 3).div_ceil(4)],
            lr_decay: 0.1,
            batch_size: 128,
            weight_decay: 5e-4,
            momentum: 0.9,
            seed: 0,
            train_eval_samples: 0,
        }
    }

    /// Hard-label run with exactly the schedule of a distillation config.
    pub fn continuation_of(d: &DistillConfig) -> Self {
        Self {
            epochs: d.total_epochs,
            lr_init: d.lr_init,
            lr_milestones: d.lr_milestones.clone(),
            lr_decay: d.lr_decay,
            batch_size: d.batch_size,
            weight_decay: d.weight_decay,
            momentum: d.momentum,
            seed: d.seed,
            train_eval_samples: d.train_eval_samples,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(self.lr_init, &self.lr_milestones, self.lr_decay, epoch)
    }
}

/// One epoch of diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based index of the completed epoch.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training cross-entropy (soft-label during distillation, hard-label otherwise).
    pub loss_ce: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_hard: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_disc: Option<f64>,
    /// Discriminator accuracy on each batch before it trains on that batch.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub disc_accuracy: Option<f64>,
    pub val_top1: f64,
    /// Absent for multi-label evaluation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_top5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_top1: Option<f64>,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight_percentiles: Option<String>,
}

impl MetricsRecord {
    /// Copy with wall-clock time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn train_val_gap(&self) -> Option<f64> {
        self.train_top1.map(|t| t - self.val_top1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

/// Inference-mode logits for a whole dataset, in dataset order.
pub fn predict_logits(model: &Model, dataset: &dyn ImageSource) -> Result<LogitBatch> {
    if dataset.is_empty() {
        return Err(Error::Empty(format!("dataset `{}`", dataset.spec().name)));
    }
    let order: Vec<usize> = (0..dataset.len()).collect();
    let mut parts = Vec::new();
    for idx in order.chunks(EVAL_BATCH) {
        parts.push(model.forward_logits(&eval_batch(dataset, idx))?.into_inner());
    }
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    LogitBatch::new(concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?)
}

/// Top-1 / top-5 accuracy in percent from logits and class labels.
pub fn accuracy_from_logits(logits: &LogitBatch, labels: &[usize]) -> Result<Accuracy> {
    if labels.is_empty() {
        return Err(Error::Empty("evaluation labels".into()));
    }
    if logits.batch_size() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.batch_size(),
            labels.len()
        )));
    }
    let k = 5.min(logits.num_classes());
    let (mut c1, mut c5) = (0usize, 0usize);
    for (row, &y) in logits.as_array().rows().into_iter().zip(labels) {
        let top = top_k(row, k);
        c1 += usize::from(top[0] == y);
        c5 += usize::from(top.contains(&y));
    }
    let n = labels.len() as f64;
    Ok(Accuracy {
        top1: 100.0 * c1 as f64 / n,
        top5: 100.0 * c5 as f64 / n,
    })
}

/// Single-crop top-1 / top-5 over the whole split.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<Accuracy> {
    if dataset.is_empty() {
        return Err(Error::Empty(format!("dataset `{}`", dataset.spec().name)));
    }
    let labels = dataset.class_labels()?;
    accuracy_from_logits(&predict_logits(model, dataset)?, labels)
}

fn train_subset_accuracy(model: &Model, train: &Dataset, limit: usize) -> Result<Option<f64>> {
    if limit == 0 {
        return Ok(None);
    }
    let n = limit.min(train.len());
    let idx: Vec<usize> = (0..n).map(|i| i * train.len() / n).collect();
    Ok(Some(evaluate(model, &train.subset(&idx))?.top1))
}

fn finite_or_abort(value: f64, what: &str, epoch: usize, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} diverged ({value}) at epoch {epoch}, step {step}")))
    }
}

/// Trains on hard labels; returns the final checkpoint and one record per epoch.
/// Zero epochs returns the initialization unchanged.
pub fn pretrain_hard(
    mut model: Model,
    train: &Dataset,
    val: &Dataset,
    config: &PretrainConfig,
    mut on_epoch: impl FnMut(&Model, &MetricsRecord) -> Result<()>,
) -> Result<(CheckpointBundle, Vec<MetricsRecord>)> {
    let labels = train.class_labels()?;
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut optimizer = Sgd::new(config.momentum, config.weight_decay);
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        let order = epoch_permutation(train.len(), config.seed, epoch);
        let mut aug = stream_rng(config.seed, Stream::Augment, epoch as u64);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (step, idx) in chunks(&order, config.batch_size).enumerate() {
            let (x, _) = train_batch(train, idx, &mut aug);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            model.zero_grad();
            let logits = model.forward_train(&x)?;
            let (loss, grad) = hard_label_ce_with_grad(&y, &logits)?;
            finite_or_abort(loss.value, "hard-label loss", epoch, step)?;
            model.backward(&grad);
            optimizer.step(model.params_mut(), lr);
            loss_sum += loss.value * idx.len() as f64;
            seen += idx.len();
        }
        let acc = evaluate(&model, val)?;
        let record = MetricsRecord {
            epoch: epoch + 1,
            lr,
            loss_ce: loss_sum / seen as f64,
            loss_kl: None,
            loss_hard: None,
            loss_adv: None,
            loss_disc: None,
            disc_accuracy: None,
            val_top1: acc.top1,
            val_top5: Some(acc.top5),
            train_top1: train_subset_accuracy(&model, train, config.train_eval_samples)?,
            wall_seconds: started.elapsed().as_secs_f64(),
            weight_percentiles: None,
        };
        info!(
            "pretrain epoch {}/{}: loss {:.4}, val top-1 {:.2}",
            record.epoch, config.epochs, record.loss_ce, record.val_top1
        );
        on_epoch(&model, &record)?;
        records.push(record);
    }
    let mut bundle = CheckpointBundle::from_model(&model, CheckpointKind::Pretrain, fingerprint(config), config.seed);
    bundle.epoch = config.epochs;
    bundle.rng = RngState {
        seed: config.seed,
        next_epoch: config.epochs,
    };
    bundle.optimizer = Some(optimizer.state(&model.params()));
    bundle.reference_top1 = Some(match records.last() {
        Some(r) => r.val_top1,
        None => evaluate(&model, val)?.top1,
    });
    Ok((bundle, records))
}

/// Where the student starts.
#[derive(Debug, Clone)]
pub enum StudentInit {
    Random { spec: ModelSpec, seed: u64 },
    Checkpoint(Box<CheckpointBundle>),
}

impl StudentInit {
    fn build(&self) -> Result<Model> {
        match self {
            StudentInit::Random { spec, seed } => build_model(spec, derive_seed(*seed, Stream::Init, 0)),
            StudentInit::Checkpoint(b) => b.to_model(),
        }
    }
}

/// Subtracts each row's mean. Logits are defined up to a per-row shift, so the
/// discriminator sees both sides in the same canonical form and cannot tell
/// them apart by offset alone.
pub fn center_logits(logits: &LogitBatch) -> LogitBatch {
    let a = logits.as_array();
    let mean = a.mean_axis(Axis(1)).expect("non-empty rows").insert_axis(Axis(1));
    LogitBatch::new(a - &mean).expect("finite logits stay finite")
}

fn hash_pixels(x: &ImageBatch) -> u64 {
    let mut h = DefaultHasher::new();
    x.shape().hash(&mut h);
    for v in x.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Resumable distillation state.
#[derive(Debug, Clone)]
pub struct Distiller<'e> {
    config: DistillConfig,
    ensemble: &'e Ensemble,
    student: Model,
    optimizer: Sgd,
    discriminator: Option<Discriminator>,
    epoch: usize,
    fingerprint: String,
}

impl<'e> Distiller<'e> {
    pub fn new(init: &StudentInit, ensemble: &'e Ensemble, config: &DistillConfig) -> Result<Self> {
        config.validate()?;
        match (config.init_mode, init) {
            (InitMode::Random, StudentInit::Checkpoint(_)) => {
                return Err(Error::Config("init_mode = random but a student checkpoint was given".into()))
            }
            (InitMode::HardLabelPretrained | InitMode::Superior, StudentInit::Random { .. }) => {
                return Err(Error::Config(format!(
                    "init_mode = {:?} needs a pretrained student checkpoint",
                    config.init_mode
                )))
            }
            _ => {}
        }
        let student = init.build()?;
        if student.num_classes() != ensemble.num_classes() {
            return Err(Error::Config(format!(
                "student predicts {} classes, ensemble {}",
                student.num_classes(),
                ensemble.num_classes()
            )));
        }
        if student.spec().input_resolution != ensemble.preprocessing().input_resolution {
            return Err(Error::Config("student and teacher input resolutions differ".into()));
        }
        let discriminator = if config.discriminator_enabled {
            let mut spec = DiscriminatorSpec::new(ensemble.num_classes());
            spec.hidden_dims = config.discriminator_hidden;
            Some(Discriminator::new(
                &spec,
                derive_seed(config.seed, Stream::Discriminator, 0),
                config.momentum,
                config.weight_decay,
            )?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            ensemble,
            student,
            optimizer: Sgd::new(config.momentum, config.weight_decay),
            discriminator,
            epoch: 0,
            fingerprint: fingerprint(config),
        })
    }

    /// Continues from a distillation checkpoint written by [`Distiller::checkpoint`].
    pub fn resume(bundle: &CheckpointBundle, ensemble: &'e Ensemble, config: &DistillConfig) -> Result<Self> {
        if bundle.kind != CheckpointKind::Distill {
            return Err(Error::Checkpoint(format!("cannot resume from a {:?} checkpoint", bundle.kind)));
        }
        let fp = fingerprint(config);
        if bundle.config_fingerprint != fp {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written under config {}, current config is {fp}",
                bundle.config_fingerprint
            )));
        }
        let student = bundle.to_model()?;
        let optimizer = match &bundle.optimizer {
            Some(s) => Sgd::from_state(s)?,
            None => Sgd::new(config.momentum, config.weight_decay),
        };
        let discriminator = match (&bundle.discriminator, config.discriminator_enabled) {
            (Some(state), true) => Some(Discriminator::from_state(state)?),
            (None, false) => None,
            _ => return Err(Error::Checkpoint("discriminator state does not match configuration".into())),
        };
        Ok(Self {
            config: config.clone(),
            ensemble,
            student,
            optimizer,
            discriminator,
            epoch: bundle.rng.next_epoch,
            fingerprint: fp,
        })
    }

    pub fn student(&self) -> &Model {
        &self.student
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_ref()
    }

    pub fn completed_epochs(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.total_epochs
    }

    pub fn checkpoint(&self) -> CheckpointBundle {
        let mut b = CheckpointBundle::from_model(&self.student, CheckpointKind::Distill, self.fingerprint.clone(), self.config.seed);
        b.optimizer = Some(self.optimizer.state(&self.student.params()));
        b.discriminator = self.discriminator.as_ref().map(Discriminator::state);
        b.epoch = self.epoch;
        b.rng = RngState {
            seed: self.config.seed,
            next_epoch: self.epoch,
        };
        b
    }

    /// Runs one epoch. `train` exposes images only; `hard_labels` is consulted
    /// only when `use_hard_labels_in_distill` is set. `train_eval` (labeled) is
    /// used for the train-accuracy diagnostic and never in a loss.
    pub fn run_epoch(
        &mut self,
        train: &dyn ImageSource,
        hard_labels: Option<&[usize]>,
        val: &Dataset,
        train_eval: Option<&Dataset>,
    ) -> Result<MetricsRecord> {
        if self.is_done() {
            return Err(Error::Config("distillation already finished".into()));
        }
        if train.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let hard_labels = match (self.config.use_hard_labels_in_distill, hard_labels) {
            (true, Some(l)) => Some(l),
            (true, None) => return Err(Error::Config("use_hard_labels_in_distill requires labels".into())),
            (false, _) => None,
        };
        let started = Instant::now();
        let epoch = self.epoch;
        let lr = self.config.lr_at(epoch);
        let seed = self.config.seed;
        let order = epoch_permutation(train.len(), seed, epoch);
        let mut aug = stream_rng(seed, Stream::Augment, epoch as u64);

        let mut sums = [0.0f64; 5]; // ce, kl, adv, disc, hard
        let (mut disc_correct, mut disc_total) = (0.0, 0usize);
        let mut seen = 0usize;
        for (step, idx) in chunks(&order, self.config.batch_size).enumerate() {
            let (x, _crops) = train_batch(train, idx, &mut aug);
            let teacher_hash = self.config.verify_crop_consistency.then(|| hash_pixels(&x));
            let (soft, teacher_logits) = self.ensemble.predict_with_logits(&x)?;

            if let Some(h) = teacher_hash {
                if hash_pixels(&x) != h {
                    return Err(Error::Numerical(format!(
                        "crop mismatch between teachers and student at step {step}"
                    )));
                }
            }
            self.student.zero_grad();
            let logits = self.student.forward_train(&x)?;
            let (ce, mut grad) = ce_loss_with_grad(&soft, &logits)?;
            finite_or_abort(ce.value, "soft-label loss", epoch, step)?;
            let kl = kl_loss(&soft, &logits)?;
            let n = idx.len() as f64;
            sums[0] += ce.value * n;
            sums[1] += kl.value * n;

            let disc_features = self
                .discriminator
                .as_ref()
                .map(|_| (center_logits(&teacher_logits), center_logits(&logits)));
            if let (Some(disc), Some((teacher_x, student_x))) = (&self.discriminator, &disc_features) {
                disc_correct += disc.accuracy(teacher_x, student_x)? * 2.0 * n;
                disc_total += 2 * idx.len();
                let (adv, adv_grad) = disc.adversarial_student_loss(student_x)?;
                // back through the centering: subtract each row's mean
                let row_mean = adv_grad.mean_axis(Axis(1)).expect("non-empty rows").insert_axis(Axis(1));
                grad.scaled_add(self.config.adv_weight, &(&adv_grad - &row_mean));
                sums[2] += adv.value * n;
            }
            if let Some(labels) = hard_labels {
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let (hard, hard_grad) = hard_label_ce_with_grad(&y, &logits)?;
                grad += &hard_grad;
                sums[4] += hard.value * n;
            }

            self.student.backward(&grad);
            self.optimizer.step(self.student.params_mut(), lr);

            if let (Some(disc), Some((teacher_x, student_x))) = (&mut self.discriminator, &disc_features) {
                let d = disc.step(teacher_x, student_x, lr)?;
                finite_or_abort(d.value, "discriminator loss", epoch, step)?;
                sums[3] += d.value * n;
            }
            seen += idx.len();
            debug!("epoch {epoch} step {step}: ce {:.4}", ce.value);
        }
        self.epoch += 1;

        let acc = evaluate(&self.student, val)?;
        let mean = |s: f64| s / seen as f64;
        let disc_on = self.discriminator.is_some();
        let record = MetricsRecord {
            epoch: self.epoch,
            lr,
            loss_ce: mean(sums[0]),
            loss_kl: Some(mean(sums[1])),
            loss_hard: hard_labels.map(|_| mean(sums[4])),
            loss_adv: disc_on.then(|| mean(sums[2])),
            loss_disc: disc_on.then(|| mean(sums[3])),
            disc_accuracy: disc_on.then(|| disc_correct / disc_total as f64),
            val_top1: acc.top1,
            val_top5: Some(acc.top5),
            train_top1: match train_eval {
                Some(t) => train_subset_accuracy(&self.student, t, self.config.train_eval_samples)?,
                None => None,
            },
            wall_seconds: started.elapsed().as_secs_f64(),
            weight_percentiles: None,
        };
        info!(
            "distill epoch {}/{}: ce {:.4}, kl {:.4}, val top-1 {:.2}",
            record.epoch,
            self.config.total_epochs,
            record.loss_ce,
            record.loss_kl.unwrap_or(f64::NAN),
            record.val_top1
        );
        Ok(record)
    }
}

/// Full distillation run. Ground-truth labels of `train` reach the loss only
/// when `use_hard_labels_in_distill` is set; otherwise they feed the
/// train-accuracy diagnostic alone.
pub fn distill(
    init: &StudentInit,
    ensemble: &Ensemble,
    train: &Dataset,
    val: &Dataset,
    config: &DistillConfig,
    mut on_epoch: impl FnMut(&Distiller<'_>, &MetricsRecord) -> Result<()>,
) -> Result<(CheckpointBundle, Vec<MetricsRecord>)> {
    ensemble.check_compatible(train.spec())?;
    let mut distiller = Distiller::new(init, ensemble, config)?;
    let hard = if config.use_hard_labels_in_distill {
        Some(train.class_labels()?)
    } else {
        None
    };
    let mut records = Vec::with_capacity(config.total_epochs);
    while !distiller.is_done() {
        let record = distiller.run_epoch(train, hard, val, Some(train))?;
        on_epoch(&distiller, &record)?;
        records.push(record);
    }
    let mut bundle = distiller.checkpoint();
    bundle.reference_top1 = records.last().map(|r| r.val_top1);
    Ok((bundle, records))
}
