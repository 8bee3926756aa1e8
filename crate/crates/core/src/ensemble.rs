//! Frozen teacher ensemble producing averaged soft labels.

use std::path::PathBuf;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointBundle;
use crate::data::{eval_batch, Dataset, DatasetSpec, ImageSource, Normalization};
use crate::error::{Error, Result};
use crate::nets::{Model, ModelSpec};
use crate::tensor::{log_softmax_rows, ImageBatch, LogitBatch, ProbBatch};

/// Input contract every teacher was trained under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub input_resolution: usize,
    pub normalization: Normalization,
}

impl Preprocessing {
    pub fn of(spec: &DatasetSpec) -> Self {
        Self {
            input_resolution: spec.resolution,
            normalization: spec.normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherEntry {
    pub spec: ModelSpec,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub teachers: Vec<TeacherEntry>,
    pub preprocessing: Preprocessing,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    teachers: Vec<Model>,
    preprocessing: Preprocessing,
}

impl Ensemble {
    pub fn new(teachers: Vec<Model>, preprocessing: Preprocessing) -> Result<Self> {
        let first = teachers
            .first()
            .ok_or_else(|| Error::Config("ensemble needs at least one teacher".into()))?;
        let classes = first.num_classes();
        for (i, t) in teachers.iter().enumerate() {
            if t.num_classes() != classes {
                return Err(Error::Config(format!(
                    "teacher {i} predicts {} classes, teacher 0 predicts {classes}",
                    t.num_classes()
                )));
            }
            if t.spec().input_resolution != preprocessing.input_resolution {
                return Err(Error::Config(format!(
                    "teacher {i} expects {}px inputs, ensemble preprocessing is {}px",
                    t.spec().input_resolution,
                    preprocessing.input_resolution
                )));
            }
        }
        Ok(Self { teachers, preprocessing })
    }

    /// Loads every teacher checkpoint up front; fails on the first missing or mismatched one.
    pub fn load(spec: &EnsembleSpec) -> Result<Self> {
        let mut teachers = Vec::with_capacity(spec.teachers.len());
        for entry in &spec.teachers {
            let bundle = CheckpointBundle::load(&entry.checkpoint)?;
            if bundle.model_spec != entry.spec {
                return Err(Error::Config(format!(
                    "{}: checkpoint holds {:?}, config declares {:?}",
                    entry.checkpoint.display(),
                    bundle.model_spec,
                    entry.spec
                )));
            }
            teachers.push(bundle.to_model()?);
        }
        Self::new(teachers, spec.preprocessing)
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.teachers[0].num_classes()
    }

    pub fn teachers(&self) -> &[Model] {
        &self.teachers
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    /// The student's data pipeline must feed teachers what they were trained on.
    pub fn check_compatible(&self, data: &DatasetSpec) -> Result<()> {
        let pre = Preprocessing::of(data);
        if pre != self.preprocessing {
            return Err(Error::Config(format!(
                "dataset `{}` preprocessing {:?} does not match the ensemble's {:?}",
                data.name, pre, self.preprocessing
            )));
        }
        if data.num_classes != self.num_classes() {
            return Err(Error::Config(format!(
                "dataset `{}` has {} classes, teachers predict {}",
                data.name,
                data.num_classes,
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Element-wise mean of the teachers' softmax outputs.
    pub fn predict(&self, batch: &ImageBatch) -> Result<ProbBatch> {
        self.predict_with_logits(batch).map(|(p, _)| p)
    }

    /// Soft labels plus the matching pre-softmax vector `log p_e` (logsumexp
    /// of the teachers' log-probabilities minus `ln K`), the teacher-side
    /// input for the discriminator.
    pub fn predict_with_logits(&self, batch: &ImageBatch) -> Result<(ProbBatch, LogitBatch)> {
        let logits = self.teachers.iter().map(|t| t.forward_logits(batch)).collect::<Result<Vec<_>>>()?;
        let k = logits.len() as f64;
        let mut mean = Array2::<f64>::zeros(logits[0].as_array().raw_dim());
        let log_probs: Vec<Array2<f64>> = logits.iter().map(|l| log_softmax_rows(l.as_array())).collect();
        for l in &logits {
            mean += l.softmax().as_array();
        }
        mean /= k;
        let mut max = log_probs[0].clone();
        for lp in &log_probs[1..] {
            max.zip_mut_with(lp, |m, &v| *m = m.max(v));
        }
        let mut acc = Array2::<f64>::zeros(max.raw_dim());
        for lp in &log_probs {
            Zip::from(&mut acc).and(lp).and(&max).for_each(|a, &v, &m| *a += (v - m).exp());
        }
        let log_mean = Zip::from(&acc).and(&max).map_collect(|&a, &m| m + a.ln() - k.ln());
        Ok((ProbBatch::new(mean)?, LogitBatch::new(log_mean)?))
    }
}

/// Softmax of a frozen teacher's logits at temperature 1.
pub fn teacher_softmax(teacher: &Model, batch: &ImageBatch) -> Result<ProbBatch> {
    Ok(teacher.forward_logits(batch)?.softmax())
}

pub fn ensemble_predict(ensemble: &Ensemble, batch: &ImageBatch) -> Result<ProbBatch> {
    ensemble.predict(batch)
}

/// Mean soft label per ground-truth class; `None` where a class has no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionTable {
    pub rows: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl SupervisionTable {
    pub fn from_probs(probs: &ProbBatch, labels: &[usize], num_classes: usize) -> Result<Self> {
        if probs.batch_size() != labels.len() {
            return Err(Error::Shape(format!(
                "{} probability rows for {} labels",
                probs.batch_size(),
                labels.len()
            )));
        }
        let mut sums = Array2::<f64>::zeros((num_classes, probs.num_classes()));
        let mut counts = vec![0usize; num_classes];
        for (row, &y) in probs.as_array().axis_iter(Axis(0)).zip(labels) {
            if y >= num_classes {
                return Err(Error::Label(format!("label {y} out of range")));
            }
            let mut acc = sums.row_mut(y);
            acc += &row;
            counts[y] += 1;
        }
        let rows = counts
            .iter()
            .enumerate()
            .map(|(c, &n)| (n > 0).then(|| sums.row(c).iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(Self { rows, counts })
    }

    pub fn to_csv(&self) -> String {
        let width = self.rows.iter().flatten().map(Vec::len).next().unwrap_or(0);
        let mut out = String::from("class,count");
        for c in 0..width {
            out.push_str(&format!(",p{c}"));
        }
        out.push('\n');
        for (c, (row, n)) in self.rows.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{c},{n}"));
            match row {
                Some(r) => r.iter().for_each(|v| out.push_str(&format!(",{v:.6}"))),
                None => (0..width).for_each(|_| out.push_str(",absent")),
            }
            out.push('\n');
        }
        out
    }
}

/// Per-class mean ensemble prediction over a labeled dataset (single-crop
/// inputs). Labels are used for grouping only.
pub fn supervision_stats(ensemble: &Ensemble, dataset: &Dataset, batch_size: usize) -> Result<SupervisionTable> {
    ensemble.check_compatible(dataset.spec())?;
    let labels = dataset.class_labels()?;
    let order: Vec<usize> = (0..dataset.len()).collect();
    let mut all = Vec::with_capacity(dataset.len());
    for idx in order.chunks(batch_size.max(1)) {
        let probs = ensemble.predict(&eval_batch(dataset, idx))?;
        all.push(probs.into_inner());
    }
    let views: Vec<_> = all.iter().map(|a| a.view()).collect();
    let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    SupervisionTable::from_probs(&ProbBatch::new(stacked)?, labels, dataset.spec().num_classes)
}
