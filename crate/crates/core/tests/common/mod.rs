#![allow(dead_code)]

pub mod smoke;

use meal::tensor::{LogitBatch, ProbBatch};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_logits<R: Rng>(rng: &mut R, n: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, c), |_| rng.random_range(-scale..scale))
}

/// Rows drawn from a softmax of random logits, so some are peaked and some flat.
pub fn random_probs<R: Rng>(rng: &mut R, n: usize, c: usize) -> Array2<f64> {
    let scale = rng.random_range(0.1..8.0);
    let z = random_logits(rng, n, c, scale);
    softmax_oracle(&z)
}

pub fn softmax_oracle(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub fn entropy_oracle(p: &Array2<f64>) -> f64 {
    let total: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    total / p.nrows() as f64
}

pub fn probs(a: Array2<f64>) -> ProbBatch {
    ProbBatch::new(a).expect("valid probabilities")
}

pub fn logits(a: Array2<f64>) -> LogitBatch {
    LogitBatch::new(a).expect("finite logits")
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &Array2<f64>, step: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = f(&probe);
        probe[idx] = orig - step;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * step);
    }
    grad
}

/// `|a - b| / max(|a| + |b|, floor)` over whole tensors.
pub fn relative_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut diff, mut norm_a, mut norm_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        diff += (x - y) * (x - y);
        norm_a += x * x;
        norm_b += y * y;
    }
    diff.sqrt() / (norm_a.sqrt() + norm_b.sqrt()).max(1e-12)
}

/// Per-class (count, correct) by direct counting.
pub fn classwise_oracle(pred: &[usize], labels: &[usize], classes: usize) -> Vec<(usize, usize)> {
    (0..classes)
        .map(|c| {
            let count = labels.iter().filter(|&&y| y == c).count();
            let correct = pred.iter().zip(labels).filter(|(&p, &y)| y == c && p == c).count();
            (count, correct)
        })
        .collect()
}

/// Linear interpolation between order statistics at rank `p/100 * (n - 1)`.
pub fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// ReLU on/off pattern of the discriminator hidden layers, recomputed from its
/// parameters (fc1.weight, fc1.bias, fc2.weight, fc2.bias, ...).
pub fn relu_pattern(d: &meal::discriminator::Discriminator, x: &Array2<f64>) -> Vec<bool> {
    let params = d.params();
    let mat = |i: usize| -> Array2<f64> { params[i].value.clone().into_dimensionality().expect("2-d weight") };
    let vec = |i: usize| -> ndarray::Array1<f64> { params[i].value.clone().into_dimensionality().expect("1-d bias") };
    let pre1 = x.dot(&mat(0).t()) + &vec(1);
    let pre2 = pre1.mapv(|v| v.max(0.0)).dot(&mat(2).t()) + &vec(3);
    pre1.iter().chain(pre2.iter()).map(|&v| v > 0.0).collect()
}

/// True when no coordinate perturbation of size `step` flips a hidden ReLU,
/// so central differences are taken on a single linear piece.
pub fn smooth_at(d: &meal::discriminator::Discriminator, x: &Array2<f64>, step: f64) -> bool {
    let base = relu_pattern(d, x);
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        for s in [step, -step] {
            probe[idx] = orig + s;
            if relu_pattern(d, &probe) != base {
                return false;
            }
        }
        probe[idx] = orig;
    }
    true
}

/// Relative error between analytic and central-difference parameter gradients
/// of the discriminator loss, over `per_tensor` random coordinates of every
/// tensor. Coordinates whose perturbation flips a hidden ReLU are skipped;
/// returns (error, checked, skipped).
pub fn discriminator_param_check<R: Rng>(
    d: &meal::discriminator::Discriminator,
    x: &Array2<f64>,
    y: &ndarray::Array1<f64>,
    step: f64,
    per_tensor: usize,
    rng: &mut R,
) -> (f64, usize, usize) {
    let mut base = d.clone();
    base.loss_and_grad(x, y).expect("discriminator loss");
    let pattern = relu_pattern(&base, x);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for pi in 0..base.params().len() {
        let len = base.params()[pi].len();
        for _ in 0..per_tensor.min(len) {
            let k = rng.random_range(0..len);
            let loss_at = |delta: f64| -> Option<f64> {
                let mut probe = d.clone();
                if let Some(v) = probe.params_mut()[pi].value.iter_mut().nth(k) {
                    *v += delta;
                }
                (relu_pattern(&probe, x) == pattern).then(|| probe.loss_and_grad(x, y).expect("discriminator loss").value)
            };
            match (loss_at(step), loss_at(-step)) {
                (Some(up), Some(down)) => {
                    numeric.push((up - down) / (2.0 * step));
                    analytic.push(*base.params()[pi].grad.iter().nth(k).expect("index in range"));
                }
                _ => skipped += 1,
            }
        }
    }
    (relative_error(&analytic, &numeric), analytic.len(), skipped)
}
