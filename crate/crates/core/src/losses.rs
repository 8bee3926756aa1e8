//! Distillation objectives. All values are in nats and averaged over the batch.
//!
//! `kl_loss` and `ce_loss` differ by the (student-independent) teacher entropy,
//! so their gradients with respect to the student logits coincide. Training
//! minimizes `ce_loss`; `kl_loss` is what gets reported.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{log_softmax_rows, softmax_rows, LogitBatch, ProbBatch};

/// Probability floor/ceiling used by the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub batch_size: usize,
}

impl LossValue {
    fn mean(total: f64, batch_size: usize) -> Result<Self> {
        let value = total / batch_size as f64;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("loss is {value}")));
        }
        Ok(Self { value, batch_size })
    }
}

fn check_pair(teacher: &ProbBatch, student: &LogitBatch) -> Result<()> {
    let (tn, tc) = teacher.as_array().dim();
    let (sn, sc) = student.as_array().dim();
    if (tn, tc) != (sn, sc) {
        return Err(Error::Shape(format!(
            "teacher probabilities are {tn}x{tc}, student logits are {sn}x{sc}"
        )));
    }
    if tn == 0 {
        return Err(Error::Empty("loss batch".into()));
    }
    Ok(())
}

/// Fails if the student assigns exactly zero probability where the teacher has mass.
fn check_support(teacher: &ProbBatch, student_probs: &Array2<f64>) -> Result<()> {
    for ((i, c), &p) in teacher.as_array().indexed_iter() {
        if p > 0.0 && student_probs[[i, c]] == 0.0 {
            return Err(Error::Numerical(format!(
                "sample {i}: student probability for class {c} underflowed to 0 under teacher mass {p}; loss is infinite"
            )));
        }
    }
    Ok(())
}

/// `(softmax(z) - p) / N`, the gradient shared by KL and CE.
fn soft_target_grad(teacher: &ProbBatch, student_probs: Array2<f64>) -> Array2<f64> {
    let n = teacher.batch_size() as f64;
    (student_probs - teacher.as_array()) / n
}

/// Mean over samples of `sum_c p log(p / q)`, `q = softmax(student)`; zero-mass teacher terms vanish.
pub fn kl_loss(teacher: &ProbBatch, student: &LogitBatch) -> Result<LossValue> {
    kl_loss_with_grad(teacher, student).map(|(l, _)| l)
}

pub fn kl_loss_with_grad(teacher: &ProbBatch, student: &LogitBatch) -> Result<(LossValue, Array2<f64>)> {
    check_pair(teacher, student)?;
    let probs = softmax_rows(student.as_array());
    check_support(teacher, &probs)?;
    let log_q = log_softmax_rows(student.as_array());
    let mut total = 0.0;
    for (&p, &lq) in teacher.as_array().iter().zip(log_q.iter()) {
        if p > 0.0 {
            total += p * (p.ln() - lq);
        }
    }
    let loss = LossValue::mean(total, teacher.batch_size())?;
    Ok((loss, soft_target_grad(teacher, probs)))
}

/// Mean over samples of `-sum_c p log softmax(student)`.
pub fn ce_loss(teacher: &ProbBatch, student: &LogitBatch) -> Result<LossValue> {
    ce_loss_with_grad(teacher, student).map(|(l, _)| l)
}

pub fn ce_loss_with_grad(teacher: &ProbBatch, student: &LogitBatch) -> Result<(LossValue, Array2<f64>)> {
    check_pair(teacher, student)?;
    let probs = softmax_rows(student.as_array());
    check_support(teacher, &probs)?;
    let log_q = log_softmax_rows(student.as_array());
    let total: f64 = teacher
        .as_array()
        .iter()
        .zip(log_q.iter())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &lq)| -p * lq)
        .sum();
    let loss = LossValue::mean(total, teacher.batch_size())?;
    Ok((loss, soft_target_grad(teacher, probs)))
}

/// Standard softmax cross-entropy against class indices.
pub fn hard_label_ce(labels: &[usize], student: &LogitBatch) -> Result<LossValue> {
    hard_label_ce_with_grad(labels, student).map(|(l, _)| l)
}

pub fn hard_label_ce_with_grad(labels: &[usize], student: &LogitBatch) -> Result<(LossValue, Array2<f64>)> {
    let (n, c) = student.as_array().dim();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::Empty("loss batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Label(format!("label {bad} out of range for {c} classes")));
    }
    let log_q = log_softmax_rows(student.as_array());
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -log_q[[i, y]]).sum();
    let mut grad = softmax_rows(student.as_array());
    for (i, &y) in labels.iter().enumerate() {
        grad[[i, y]] -= 1.0;
    }
    grad /= n as f64;
    Ok((LossValue::mean(total, n)?, grad))
}

fn check_binary(labels: ArrayView1<'_, f64>) -> Result<()> {
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(y) => Err(Error::Label(format!("binary label must be 0 or 1, got {y}"))),
        None => Ok(()),
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Mean of `-[y log p + (1 - y) log(1 - p)]` with `p` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(labels: ArrayView1<'_, f64>, probs: ArrayView1<'_, f64>) -> Result<LossValue> {
    if labels.len() != probs.len() {
        return Err(Error::Shape(format!("{} labels for {} probabilities", labels.len(), probs.len())));
    }
    if labels.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    check_binary(labels)?;
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p))) {
        return Err(Error::Numerical(format!("probability {p} outside [0, 1]")));
    }
    let total: f64 = labels
        .iter()
        .zip(probs.iter())
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    LossValue::mean(total, labels.len())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// [`bce_loss`] applied to `sigmoid(scores)`, with the gradient w.r.t. the scores.
///
/// The gradient is the exact derivative of the clamped loss: `(p - y) / N`
/// inside the clamp window, zero where the probability is clamped.
pub fn bce_with_logits(labels: ArrayView1<'_, f64>, scores: ArrayView1<'_, f64>) -> Result<(LossValue, Array1<f64>)> {
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!("non-finite discriminator score {s}")));
    }
    let probs = scores.mapv(sigmoid);
    let loss = bce_loss(labels, probs.view())?;
    let n = labels.len() as f64;
    let grad = ndarray::Zip::from(&labels).and(&probs).map_collect(|&y, &p| {
        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
            0.0
        } else {
            (p - y) / n
        }
    });
    Ok((loss, grad))
}
