//! Diagnostics over frozen models and logged metrics.
//!
//! Everything here writes plain CSV so plots can be made by external tools.

use std::fmt::Write as _;

use log::warn;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageSource};
use crate::error::{Error, Result};
use crate::nets::{ConvAnchor, Model};
use crate::trainer::{predict_logits, MetricsRecord};

pub const PERCENTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPair {
    pub kind: PairKind,
    pub a: usize,
    pub b: usize,
}

/// (cat, dog) and (frog, ship).
pub const CIFAR10_PAIRS: [ClassPair; 2] = [
    ClassPair {
        kind: PairKind::Similar,
        a: 3,
        b: 5,
    },
    ClassPair {
        kind: PairKind::Dissimilar,
        a: 6,
        b: 8,
    },
];

/// Synthetic classes `2k` and `2k + 1` share color and orientation.
pub const SYNTHETIC_PAIRS: [ClassPair; 2] = [
    ClassPair {
        kind: PairKind::Similar,
        a: 0,
        b: 1,
    },
    ClassPair {
        kind: PairKind::Dissimilar,
        a: 2,
        b: 5,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: usize,
    pub count: usize,
    pub correct: usize,
    /// `None` when the class has no samples.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub pair: ClassPair,
    pub accuracy_a: Option<f64>,
    pub accuracy_b: Option<f64>,
    /// Percent of class `a` samples predicted as `b`, and vice versa.
    pub confusion_ab: Option<f64>,
    pub confusion_ba: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseReport {
    pub rows: Vec<ClassRow>,
    pub pairs: Vec<PairSummary>,
    pub overall_top1: f64,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_owned(), |x| format!("{x:.4}"))
}

pub fn classwise_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<ClasswiseReport> {
    classwise_accuracy_with_pairs(predictions, labels, num_classes, &[])
}

pub fn classwise_accuracy_with_pairs(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
    pairs: &[ClassPair],
) -> Result<ClasswiseReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("classwise accuracy inputs".into()));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= num_classes) {
        return Err(Error::Label(format!("class {bad} out of range for {num_classes} classes")));
    }
    let mut confusion = Array2::<usize>::zeros((num_classes, num_classes));
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[[y, p]] += 1;
    }
    let rows: Vec<ClassRow> = (0..num_classes)
        .map(|c| {
            let count = confusion.row(c).sum();
            let correct = confusion[[c, c]];
            ClassRow {
                class: c,
                count,
                correct,
                accuracy: pct(correct, count),
            }
        })
        .collect();
    let mut summaries = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if pair.a >= num_classes || pair.b >= num_classes {
            return Err(Error::Label(format!("pair ({}, {}) out of range", pair.a, pair.b)));
        }
        summaries.push(PairSummary {
            pair: *pair,
            accuracy_a: rows[pair.a].accuracy,
            accuracy_b: rows[pair.b].accuracy,
            confusion_ab: pct(confusion[[pair.a, pair.b]], rows[pair.a].count),
            confusion_ba: pct(confusion[[pair.b, pair.a]], rows[pair.b].count),
        });
    }
    let correct: usize = rows.iter().map(|r| r.correct).sum();
    Ok(ClasswiseReport {
        rows,
        pairs: summaries,
        overall_top1: 100.0 * correct as f64 / labels.len() as f64,
    })
}

/// Classwise report for a model on a labeled split.
pub fn classwise_for_model(model: &Model, dataset: &Dataset, pairs: &[ClassPair]) -> Result<ClasswiseReport> {
    let labels = dataset.class_labels()?;
    let preds = predict_logits(model, dataset)?.argmax();
    classwise_accuracy_with_pairs(&preds, labels, dataset.spec().num_classes, pairs)
}

impl ClasswiseReport {
    pub fn to_csv(&self, class_names: Option<&[&str]>) -> String {
        let name = |c: usize| {
            class_names
                .and_then(|n| n.get(c))
                .map_or_else(|| c.to_string(), |s| (*s).to_owned())
        };
        let mut s = String::from("class,name,count,correct,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.class, name(r.class), r.count, r.correct, fmt_opt(r.accuracy));
        }
        let _ = writeln!(
            s,
            "overall,all,{},,{:.4}",
            self.rows.iter().map(|r| r.count).sum::<usize>(),
            self.overall_top1
        );
        s
    }

    pub fn pairs_csv(&self, class_names: Option<&[&str]>) -> String {
        let name = |c: usize| {
            class_names
                .and_then(|n| n.get(c))
                .map_or_else(|| c.to_string(), |s| (*s).to_owned())
        };
        let mut s = String::from("kind,a,b,accuracy_a,accuracy_b,confusion_ab,confusion_ba\n");
        for p in &self.pairs {
            let kind = match p.pair.kind {
                PairKind::Similar => "similar",
                PairKind::Dissimilar => "dissimilar",
            };
            let _ = writeln!(
                s,
                "{kind},{},{},{},{},{},{}",
                name(p.pair.a),
                name(p.pair.b),
                fmt_opt(p.accuracy_a),
                fmt_opt(p.accuracy_b),
                fmt_opt(p.confusion_ab),
                fmt_opt(p.confusion_ba)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub classes: Vec<usize>,
    pub embeddings: Array2<f64>,
}

/// Penultimate features of every sample whose class is in `classes`, in dataset order.
pub fn export_embeddings(model: &Model, dataset: &Dataset, classes: &[usize]) -> Result<EmbeddingTable> {
    if classes.is_empty() {
        return Err(Error::Empty("class subset".into()));
    }
    let num_classes = dataset.spec().num_classes;
    if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Label(format!("unknown class {bad} (dataset has {num_classes})")));
    }
    let labels = dataset.class_labels()?;
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| classes.contains(&labels[i])).collect();
    if idx.is_empty() {
        return Err(Error::Empty("no samples in the requested classes".into()));
    }
    let subset = dataset.subset(&idx);
    let mut parts = Vec::new();
    for chunk in (0..subset.len()).collect::<Vec<_>>().chunks(256) {
        parts.push(model.forward_embedding(&crate::data::eval_batch(&subset, chunk))?);
    }
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    let embeddings = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(EmbeddingTable {
        classes: idx.iter().map(|&i| labels[i]).collect(),
        embeddings,
    })
}

impl EmbeddingTable {
    pub fn to_csv(&self) -> String {
        let dim = self.embeddings.ncols();
        let mut s = String::from("class");
        for d in 0..dim {
            let _ = write!(s, ",e{d}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(self.embeddings.rows()) {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Two-fold cross-validated accuracy (percent) of a logistic-regression
    /// classifier separating classes `a` and `b`.
    pub fn linear_separability(&self, a: usize, b: usize) -> Result<f64> {
        let idx: Vec<usize> = (0..self.classes.len())
            .filter(|&i| self.classes[i] == a || self.classes[i] == b)
            .collect();
        let (ia, ib): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.classes[i] == a);
        if ia.len() < 2 || ib.len() < 2 {
            return Err(Error::Empty(format!("need >= 2 samples of classes {a} and {b}")));
        }
        let x = self.embeddings.select(Axis(0), &idx);
        let y: Array1<f64> = idx.iter().map(|&i| f64::from(self.classes[i] == a)).collect();
        let folds: Vec<usize> = {
            // alternate within each class so both folds see both classes
            let mut f = vec![0; idx.len()];
            let pos = |i: usize| idx.iter().position(|&j| j == i).expect("member");
            for (k, &i) in ia.iter().enumerate() {
                f[pos(i)] = k % 2;
            }
            for (k, &i) in ib.iter().enumerate() {
                f[pos(i)] = k % 2;
            }
            f
        };
        let mut correct = 0usize;
        for test_fold in 0..2 {
            let tr: Vec<usize> = (0..idx.len()).filter(|&i| folds[i] != test_fold).collect();
            let te: Vec<usize> = (0..idx.len()).filter(|&i| folds[i] == test_fold).collect();
            let xtr = x.select(Axis(0), &tr);
            let mean = xtr.mean_axis(Axis(0)).expect("non-empty");
            let std = xtr.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
            let norm = |m: Array2<f64>| (m - &mean) / &std;
            let xtr = norm(xtr);
            let ytr = y.select(Axis(0), &tr);
            let (w, bias) = fit_logistic(&xtr, &ytr);
            let xte = norm(x.select(Axis(0), &te));
            for (row, &i) in xte.rows().into_iter().zip(&te) {
                let pred = row.dot(&w) + bias > 0.0;
                correct += usize::from(pred == (y[i] > 0.5));
            }
        }
        Ok(100.0 * correct as f64 / idx.len() as f64)
    }
}

/// L2-regularized logistic regression by full-batch gradient descent.
fn fit_logistic(x: &Array2<f64>, y: &Array1<f64>) -> (Array1<f64>, f64) {
    let n = x.nrows() as f64;
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut b = 0.0;
    for _ in 0..500 {
        let z = x.dot(&w) + b;
        let r = z.mapv(crate::losses::sigmoid) - y;
        let gw = x.t().dot(&r) / n + &w * 1e-3;
        let gb = r.sum() / n;
        w.scaled_add(-0.5, &gw);
        b -= 0.5 * gb;
    }
    (w, b)
}

/// Which weight tensors a diagnostic looks at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelector {
    /// Every parameter tensor.
    All,
    /// Weight tensors of every convolution.
    Convs,
    /// Weight tensor of one named layer, e.g. `stage1.block0.conv2`.
    Layer(String),
    Anchor(ConvAnchor),
}

impl std::str::FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Self::All,
            "convs" => Self::Convs,
            "first" => Self::Anchor(ConvAnchor::First),
            "middle" => Self::Anchor(ConvAnchor::Middle),
            "last" => Self::Anchor(ConvAnchor::Last),
            other if !other.is_empty() => Self::Layer(other.to_owned()),
            _ => return Err(Error::Config("empty layer selector".into())),
        })
    }
}

/// (tensor name, flattened values) for every tensor matched by `selector`.
pub fn select_weights(model: &Model, selector: &LayerSelector) -> Result<Vec<(String, Vec<f64>)>> {
    let wanted: Option<Vec<String>> = match selector {
        LayerSelector::All => None,
        LayerSelector::Convs => Some(model.conv_layer_names().iter().map(|n| format!("{n}.weight")).collect()),
        LayerSelector::Layer(name) => Some(vec![format!("{name}.weight")]),
        LayerSelector::Anchor(a) => Some(vec![format!("{}.weight", model.anchor_layer(*a))]),
    };
    let out: Vec<(String, Vec<f64>)> = model
        .named_weights()
        .filter(|(name, _)| wanted.as_ref().is_none_or(|w| w.iter().any(|x| x == name)))
        .map(|(name, v)| (name.to_owned(), v.iter().copied().collect()))
        .collect();
    if out.is_empty() {
        return Err(Error::Config(format!("layer selector {selector:?} matches no layer")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogram {
    pub layer: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over `[min, max]`; bins are half-open except the last.
/// A constant tensor gets its range widened symmetrically.
pub fn histogram(values: &[f64], num_bins: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if num_bins == 0 {
        return Err(Error::Config("num_bins must be positive".into()));
    }
    if values.is_empty() {
        return Err(Error::Empty("histogram input".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite weight".into()));
    }
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        let eps = (lo.abs() * 1e-6).max(1e-9);
        lo -= eps;
        hi += eps;
    }
    let width = (hi - lo) / num_bins as f64;
    let mut edges: Vec<f64> = (0..num_bins).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    let mut counts = vec![0usize; num_bins];
    for &v in values {
        let mut i = (((v - lo) / width).floor() as usize).min(num_bins - 1);
        while i > 0 && v < edges[i] {
            i -= 1;
        }
        while i + 1 < num_bins && v >= edges[i + 1] {
            i += 1;
        }
        counts[i] += 1;
    }
    Ok((edges, counts))
}

pub fn weight_histogram(model: &Model, selector: &LayerSelector, num_bins: usize) -> Result<Vec<WeightHistogram>> {
    select_weights(model, selector)?
        .into_iter()
        .map(|(layer, values)| {
            let (edges, counts) = histogram(&values, num_bins)?;
            Ok(WeightHistogram { layer, edges, counts })
        })
        .collect()
}

pub fn histograms_to_csv(hists: &[WeightHistogram]) -> String {
    let mut s = String::from("layer,bin,lower,upper,count\n");
    for h in hists {
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{i},{},{},{c}", h.layer, h.edges[i], h.edges[i + 1]);
        }
    }
    s
}

/// Linear interpolation between order statistics at fractional rank `p/100 * (n-1)`.
pub fn percentiles(values: &[f64], ps: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN weight".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    ps.iter()
        .map(|&p| {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::Config(format!("percentile {p} outside [0, 100]")));
            }
            let rank = p / 100.0 * last;
            let lo = rank.floor() as usize;
            let hi = rank.ceil() as usize;
            let frac = rank - lo as f64;
            Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileSnapshot {
    pub layer: String,
    pub values: [f64; 5],
}

/// Percentiles 10/25/50/75/90 of the single tensor matched by `selector`.
pub fn percentile_snapshot(model: &Model, selector: &LayerSelector) -> Result<PercentileSnapshot> {
    let mut selected = select_weights(model, selector)?;
    if selected.len() != 1 {
        return Err(Error::Config(format!(
            "selector {selector:?} matches {} layers, expected one",
            selected.len()
        )));
    }
    let (layer, values) = selected.remove(0);
    let p = percentiles(&values, &PERCENTILES)?;
    Ok(PercentileSnapshot {
        layer,
        values: [p[0], p[1], p[2], p[3], p[4]],
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PercentileTrace {
    pub layer: String,
    pub epochs: Vec<usize>,
    pub values: Vec<[f64; 5]>,
}

impl PercentileTrace {
    pub fn push(&mut self, epoch: usize, snapshot: &PercentileSnapshot) {
        if self.layer.is_empty() {
            self.layer = snapshot.layer.clone();
        }
        self.epochs.push(epoch);
        self.values.push(snapshot.values);
    }

    pub const CSV_HEADER: &'static str = "epoch,layer,p10,p25,p50,p75,p90";

    pub fn csv_row(epoch: usize, snapshot: &PercentileSnapshot) -> String {
        let v = snapshot.values;
        format!("{epoch},{},{},{},{},{},{}", snapshot.layer, v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (&e, v) in self.epochs.iter().zip(&self.values) {
            let snap = PercentileSnapshot {
                layer: self.layer.clone(),
                values: *v,
            };
            let _ = writeln!(s, "{}", Self::csv_row(e, &snap));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub a_top1: f64,
    pub b_top1: f64,
    pub a_top5: Option<f64>,
    pub b_top5: Option<f64>,
    pub a_gap: Option<f64>,
    pub b_gap: Option<f64>,
}

/// Deltas are A minus B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub final_top1_delta: f64,
    pub final_top5_delta: Option<f64>,
    pub best_top1_delta: f64,
    pub best_top5_delta: Option<f64>,
    pub final_gap_a: Option<f64>,
    pub final_gap_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub rows: Vec<CurveRow>,
    pub summary: CurveSummary,
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Aligns two runs on their common epochs.
pub fn compare_curves(a: &[MetricsRecord], b: &[MetricsRecord]) -> Result<CurveComparison> {
    let rows: Vec<CurveRow> = a
        .iter()
        .filter_map(|ra| {
            b.iter().find(|rb| rb.epoch == ra.epoch).map(|rb| CurveRow {
                epoch: ra.epoch,
                a_top1: ra.val_top1,
                b_top1: rb.val_top1,
                a_top5: ra.val_top5,
                b_top5: rb.val_top5,
                a_gap: ra.train_val_gap(),
                b_gap: rb.train_val_gap(),
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty("the runs share no epochs".into()));
    }
    if rows.len() != a.len() || rows.len() != b.len() {
        warn!("comparing on {} shared epochs ({} vs {} recorded)", rows.len(), a.len(), b.len());
    }
    let best = |f: fn(&CurveRow) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let best5 = |f: fn(&CurveRow) -> Option<f64>| rows.iter().map(f).try_fold(f64::NEG_INFINITY, |m, v| v.map(|v| m.max(v)));
    let last = rows.last().expect("non-empty");
    let summary = CurveSummary {
        final_top1_delta: last.a_top1 - last.b_top1,
        final_top5_delta: delta(last.a_top5, last.b_top5),
        best_top1_delta: best(|r| r.a_top1) - best(|r| r.b_top1),
        best_top5_delta: delta(best5(|r| r.a_top5), best5(|r| r.b_top5)),
        final_gap_a: last.a_gap,
        final_gap_b: last.b_gap,
    };
    Ok(CurveComparison { rows, summary })
}

impl CurveComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,a_top1,b_top1,delta_top1,a_top5,b_top5,delta_top5,a_gap,b_gap\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{:.4},{},{},{},{},{}",
                r.epoch,
                r.a_top1,
                r.b_top1,
                r.a_top1 - r.b_top1,
                fmt_opt(r.a_top5),
                fmt_opt(r.b_top5),
                fmt_opt(delta(r.a_top5, r.b_top5)),
                fmt_opt(r.a_gap),
                fmt_opt(r.b_gap)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub reference: String,
    pub reference_top1: f64,
    pub student_top1: f64,
    pub gap: f64,
}

/// Teacher minus student top-1, against each teacher and the ensemble.
pub fn teacher_student_gaps(student_top1: f64, teachers: &[(String, f64)], ensemble_top1: Option<f64>) -> Vec<GapRow> {
    teachers
        .iter()
        .cloned()
        .chain(ensemble_top1.map(|e| ("ensemble".to_owned(), e)))
        .map(|(reference, reference_top1)| GapRow {
            reference,
            reference_top1,
            student_top1,
            gap: reference_top1 - student_top1,
        })
        .collect()
}

pub fn gaps_to_csv(rows: &[GapRow]) -> String {
    let mut s = String::from("reference,reference_top1,student_top1,gap\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.4},{:.4},{:.4}", r.reference, r.reference_top1, r.student_top1, r.gap);
    }
    s
}
