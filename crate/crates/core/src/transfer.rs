//! Downstream transfer: full fine-tuning and frozen-backbone linear probing.

use std::time::Instant;

use log::info;
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fingerprint, CheckpointBundle, CheckpointKind, RngState};
use crate::data::{chunks, epoch_permutation, train_batch, Dataset, ImageSource, LabelArity, Labels};
use crate::error::{Error, Result};
use crate::losses::{bce_with_logits, hard_label_ce_with_grad, sigmoid, LossValue};
use crate::nets::{build_model, ModelSpec};
use crate::nn::{Mode, Sgd};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tensor::LogitBatch;
use crate::trainer::{accuracy_from_logits, predict_logits, step_lr, MetricsRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    Finetune,
    LinearProbe,
}

impl std::str::FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Self::Finetune),
            "linear-probe" => Ok(Self::LinearProbe),
            other => Err(Error::Config(format!("unknown transfer mode `{other}` (finetune | linear-probe)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    SoftmaxCe,
    SigmoidCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub mode: TransferMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to 0.01 for fine-tuning and 0.1 for linear probing.
    pub lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Defaults from the dataset's label arity.
    pub objective: Option<Objective>,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            mode: TransferMode::Finetune,
            epochs: 200,
            batch_size: 128,
            lr: None,
            momentum: 0.9,
            weight_decay: 1e-4,
            objective: None,
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn new(mode: TransferMode, epochs: usize) -> Self {
        Self {
            mode,
            epochs,
            ..Self::default()
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.mode {
            TransferMode::Finetune => 0.01,
            TransferMode::LinearProbe => 0.1,
        })
    }

    /// Initial rate decayed tenfold at half and three quarters of training.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(self.learning_rate(), &[self.epochs / 2, self.epochs * 3 / 4], 0.1, epoch)
    }

    pub fn objective_for(&self, arity: LabelArity) -> Result<Objective> {
        let natural = match arity {
            LabelArity::Single => Objective::SoftmaxCe,
            LabelArity::Multi => Objective::SigmoidCe,
        };
        match self.objective {
            None => Ok(natural),
            Some(o) if o == natural => Ok(o),
            Some(o) => Err(Error::Config(format!("objective {o:?} does not fit {arity:?}-label data"))),
        }
    }
}

fn check_targets(targets: &Array2<f64>, logits: &LogitBatch) -> Result<()> {
    if targets.dim() != logits.as_array().dim() {
        return Err(Error::Shape(format!(
            "targets {:?} vs logits {:?}",
            targets.dim(),
            logits.as_array().dim()
        )));
    }
    Ok(())
}

/// Mean over samples and classes of the binary cross-entropy of `sigmoid(logit)`.
pub fn multilabel_sigmoid_ce(targets: &Array2<f64>, logits: &LogitBatch) -> Result<LossValue> {
    multilabel_sigmoid_ce_with_grad(targets, logits).map(|(l, _)| l)
}

pub fn multilabel_sigmoid_ce_with_grad(targets: &Array2<f64>, logits: &LogitBatch) -> Result<(LossValue, Array2<f64>)> {
    check_targets(targets, logits)?;
    let dim = targets.dim();
    let flat_t = targets.as_standard_layout();
    let flat_l = logits.as_array().as_standard_layout();
    let t = ArrayView1::from(flat_t.as_slice().expect("standard layout"));
    let l = ArrayView1::from(flat_l.as_slice().expect("standard layout"));
    let (loss, grad) = bce_with_logits(t, l)?;
    let grad = grad.into_shape_with_order(dim).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((
        LossValue {
            value: loss.value,
            batch_size: dim.0,
        },
        grad,
    ))
}

/// Mean over classes of the per-class accuracy (percent) at threshold 0.5.
pub fn multilabel_accuracy(targets: &Array2<f64>, logits: &LogitBatch) -> Result<f64> {
    check_targets(targets, logits)?;
    let n = targets.nrows() as f64;
    let per_class: Vec<f64> = targets
        .axis_iter(Axis(1))
        .zip(logits.as_array().axis_iter(Axis(1)))
        .map(|(t, l)| {
            let correct = t.iter().zip(l).filter(|(&y, &z)| (sigmoid(z) >= 0.5) == (y > 0.5)).count();
            100.0 * correct as f64 / n
        })
        .collect();
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Top-1 for single-label data, mean per-class accuracy for multi-label.
pub fn transfer_score(logits: &LogitBatch, dataset: &Dataset) -> Result<(f64, Option<f64>)> {
    match dataset.labels() {
        Labels::Single(y) => {
            let acc = accuracy_from_logits(logits, y)?;
            Ok((acc.top1, Some(acc.top5)))
        }
        Labels::Multi(t) => Ok((multilabel_accuracy(t, logits)?, None)),
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub checkpoint: CheckpointBundle,
    pub records: Vec<MetricsRecord>,
    pub final_score: f64,
}

fn batch_loss(objective: Objective, train: &Dataset, idx: &[usize], logits: &LogitBatch) -> Result<(LossValue, Array2<f64>)> {
    match (objective, train.labels()) {
        (Objective::SoftmaxCe, Labels::Single(y)) => {
            let y: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            hard_label_ce_with_grad(&y, logits)
        }
        (Objective::SigmoidCe, Labels::Multi(t)) => multilabel_sigmoid_ce_with_grad(&t.select(Axis(0), idx), logits),
        _ => Err(Error::Config("objective does not match the dataset labels".into())),
    }
}

/// Fits a fresh classifier head (and, when fine-tuning, the backbone) to `train`.
pub fn transfer_run(pretrained: &CheckpointBundle, train: &Dataset, val: &Dataset, config: &TransferConfig) -> Result<TransferOutcome> {
    let num_classes = train.spec().num_classes;
    if val.spec().num_classes != num_classes || val.spec().label_arity != train.spec().label_arity {
        return Err(Error::Config("train and val splits disagree on classes or label arity".into()));
    }
    if train.is_empty() {
        return Err(Error::Empty("transfer training set".into()));
    }
    let objective = config.objective_for(train.spec().label_arity)?;
    let mut model = pretrained.to_model()?;
    if model.spec().input_resolution != train.spec().resolution {
        return Err(Error::Config(format!(
            "backbone expects {}px inputs, dataset provides {}px",
            model.spec().input_resolution,
            train.spec().resolution
        )));
    }
    let head = model.new_head(num_classes, derive_seed(config.seed, Stream::Head, 0));
    model.set_head(head)?;

    let mut optimizer = Sgd::new(config.momentum, config.weight_decay);
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        let order = epoch_permutation(train.len(), config.seed, epoch);
        let mut aug = stream_rng(config.seed, Stream::Augment, epoch as u64);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for idx in chunks(&order, config.batch_size) {
            let (x, _) = train_batch(train, idx, &mut aug);
            let loss = match config.mode {
                TransferMode::Finetune => {
                    model.zero_grad();
                    let logits = model.forward_train(&x)?;
                    let (loss, grad) = batch_loss(objective, train, idx, &logits)?;
                    model.backward(&grad);
                    optimizer.step(model.params_mut(), lr);
                    loss
                }
                TransferMode::LinearProbe => {
                    let features = model.forward_embedding(&x)?;
                    let mut head = model.head().clone();
                    for p in head.params_mut() {
                        p.zero_grad();
                    }
                    let logits = LogitBatch::new(head.forward(&features, Mode::Train))?;
                    let (loss, grad) = batch_loss(objective, train, idx, &logits)?;
                    head.backward(&grad);
                    optimizer.step(head.params_mut(), lr);
                    model.set_head(head)?;
                    loss
                }
            };
            if !loss.value.is_finite() {
                return Err(Error::Numerical(format!("transfer loss diverged at epoch {epoch}")));
            }
            loss_sum += loss.value * idx.len() as f64;
            seen += idx.len();
        }
        let (score, top5) = transfer_score(&predict_logits(&model, val)?, val)?;
        let record = MetricsRecord {
            epoch: epoch + 1,
            lr,
            loss_ce: loss_sum / seen as f64,
            loss_kl: None,
            loss_hard: None,
            loss_adv: None,
            loss_disc: None,
            disc_accuracy: None,
            val_top1: score,
            val_top5: top5,
            train_top1: None,
            wall_seconds: started.elapsed().as_secs_f64(),
            weight_percentiles: None,
        };
        info!(
            "transfer epoch {}/{}: loss {:.4}, score {:.2}",
            record.epoch, config.epochs, record.loss_ce, score
        );
        records.push(record);
    }
    let final_score = match records.last() {
        Some(r) => r.val_top1,
        None => transfer_score(&predict_logits(&model, val)?, val)?.0,
    };
    let mut checkpoint = CheckpointBundle::from_model(&model, CheckpointKind::Transfer, fingerprint(config), config.seed);
    checkpoint.epoch = config.epochs;
    checkpoint.rng = RngState {
        seed: config.seed,
        next_epoch: config.epochs,
    };
    checkpoint.optimizer = Some(match config.mode {
        TransferMode::Finetune => optimizer.state(&model.params()),
        TransferMode::LinearProbe => optimizer.state(&model.head().params()),
    });
    checkpoint.reference_top1 = Some(final_score);
    Ok(TransferOutcome {
        checkpoint,
        records,
        final_score,
    })
}

/// Control run: the same architecture fine-tuned from random initialization.
pub fn transfer_from_scratch(spec: &ModelSpec, train: &Dataset, val: &Dataset, config: &TransferConfig) -> Result<TransferOutcome> {
    let model = build_model(spec, derive_seed(config.seed, Stream::Init, 0))?;
    let init = CheckpointBundle::from_model(&model, CheckpointKind::Init, fingerprint(spec), config.seed);
    let config = TransferConfig {
        mode: TransferMode::Finetune,
        ..config.clone()
    };
    transfer_run(&init, train, val, &config)
}
