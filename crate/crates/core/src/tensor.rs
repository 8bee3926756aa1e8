//! Batch types shared across the crate.

use ndarray::{Array2, Array4, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// NHWC image batch, normalized, ready for a forward pass.
pub type ImageBatch = Array4<f64>;

/// Tolerance on row sums of probability vectors.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Pre-softmax class scores, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch(Array2<f64>);

impl LogitBatch {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite logit {v} at sample {r}, class {c}")));
        }
        Ok(Self(values))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn batch_size(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    /// Row-wise softmax at temperature 1.
    pub fn softmax(&self) -> ProbBatch {
        ProbBatch(softmax_rows(&self.0))
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.0.rows().into_iter().map(argmax).collect()
    }
}

/// Per-sample class distributions: entries in `[0, 1]`, rows summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch(Array2<f64>);

impl ProbBatch {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (i, row) in values.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0 && **v <= 1.0)) {
                return Err(Error::Numerical(format!("sample {i}: probability {v} outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::Numerical(format!("sample {i}: probabilities sum to {s}")));
            }
        }
        Ok(Self(values))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn batch_size(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    /// Shannon entropy per row in nats, `0 ln 0 = 0`.
    pub fn entropy(&self) -> Vec<f64> {
        self.0
            .rows()
            .into_iter()
            .map(|r| -r.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
            .collect()
    }
}

pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Indices of the `k` largest entries, ties broken toward the lower index.
pub fn top_k(row: ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = LogitBatch::new(array![[0.0, 0.0]]).unwrap().softmax();
        assert_eq!(p.as_array(), &array![[0.5, 0.5]]);
    }

    #[test]
    fn prob_batch_rejects_bad_rows() {
        assert!(ProbBatch::new(array![[0.6, 0.6]]).is_err());
        assert!(ProbBatch::new(array![[-0.1, 1.1]]).is_err());
        assert!(ProbBatch::new(array![[0.25, 0.75]]).is_ok());
    }

    #[test]
    fn logit_batch_rejects_nan() {
        assert!(matches!(LogitBatch::new(array![[0.0, f64::NAN]]), Err(Error::Numerical(_))));
    }

    #[test]
    fn top_k_orders_by_score() {
        assert_eq!(top_k(array![0.1, 0.5, 0.2, 0.5].view(), 3), vec![1, 3, 2]);
    }

    #[test]
    fn log_softmax_is_stable_for_large_logits() {
        let l = log_softmax_rows(&array![[1000.0, 0.0]]);
        assert!(l.iter().all(|v| v.is_finite()));
        assert!((l[[0, 0]]).abs() < 1e-12);
    }
}
