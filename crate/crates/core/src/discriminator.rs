//! Teacher-vs-student discriminator over final pre-softmax outputs.
//!
//! `f` is a three-layer MLP `C -> h1 -> h2 -> 1` with ReLU between layers;
//! the discriminator probability is `sigmoid(f(x))`, trained with binary
//! cross-entropy on teacher (label 1) versus student (label 0) features.
//! The student plays the non-saturating side: it minimizes `-log sigmoid(f(student))`.

use ndarray::{concatenate, Array1, Array2, Axis, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{bce_with_logits, sigmoid, LossValue};
use crate::nn::{Linear, Mode, Param, Relu, Sgd, SgdState, TensorRecord};
use crate::tensor::LogitBatch;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    /// Logit width (number of classes).
    pub input_dim: usize,
    pub hidden_dims: [usize; 2],
    pub enabled: bool,
}

impl DiscriminatorSpec {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: [128, 64],
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "discriminator widths must be positive: input {} hidden {:?}",
                self.input_dim, self.hidden_dims
            )));
        }
        Ok(())
    }
}

/// Serialized discriminator weights plus its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorState {
    pub spec: DiscriminatorSpec,
    pub weights: Vec<TensorRecord>,
    pub optimizer: SgdState,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    fc1: Linear,
    relu1: Relu<Ix2>,
    fc2: Linear,
    relu2: Relu<Ix2>,
    fc3: Linear,
    optimizer: Sgd,
}

fn scores_column(x: Array2<f64>) -> Array1<f64> {
    x.index_axis_move(Axis(1), 0)
}

impl Discriminator {
    pub fn new(spec: &DiscriminatorSpec, seed: u64, momentum: f64, weight_decay: f64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h1, h2] = spec.hidden_dims;
        Ok(Self {
            spec: spec.clone(),
            fc1: Linear::new("disc.fc1", spec.input_dim, h1, &mut rng),
            relu1: Relu::default(),
            fc2: Linear::new("disc.fc2", h1, h2, &mut rng),
            relu2: Relu::default(),
            fc3: Linear::new("disc.fc3", h2, 1, &mut rng),
            optimizer: Sgd::new(momentum, weight_decay),
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    fn check_width(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "discriminator expects width {}, got {}",
                self.spec.input_dim,
                features.ncols()
            )));
        }
        Ok(())
    }

    /// Raw scores `f(x)`, one per row.
    pub fn scores(&self, features: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_width(features)?;
        let h = crate::nn::relu(&self.fc1.infer(features));
        let h = crate::nn::relu(&self.fc2.infer(&h));
        Ok(scores_column(self.fc3.infer(&h)))
    }

    /// `sigmoid(f(x))` per sample.
    pub fn prob(&self, features: &LogitBatch) -> Result<Array1<f64>> {
        Ok(self.scores(features.as_array())?.mapv(sigmoid))
    }

    fn forward_train(&mut self, x: &Array2<f64>) -> Array1<f64> {
        let h = self.fc1.forward(x, Mode::Train);
        let h = self.relu1.forward(&h, Mode::Train);
        let h = self.fc2.forward(&h, Mode::Train);
        let h = self.relu2.forward(&h, Mode::Train);
        scores_column(self.fc3.forward(&h, Mode::Train))
    }

    fn backward(&mut self, dscores: &Array1<f64>) -> Array2<f64> {
        let d = dscores.view().insert_axis(Axis(1)).to_owned();
        let d = self.fc3.backward(&d);
        let d = self.relu2.backward(&d);
        let d = self.fc2.backward(&d);
        let d = self.relu1.backward(&d);
        self.fc1.backward(&d)
    }

    /// Gradient of a score-space upstream gradient with respect to the inputs,
    /// leaving parameters and their gradients untouched.
    pub fn input_gradient(&self, x: &Array2<f64>, dscores: &Array1<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let w = |l: &Linear| l.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight").to_owned();
        let (w1, w2, w3) = (w(&self.fc1), w(&self.fc2), w(&self.fc3));
        let pre1 = self.fc1.infer(x);
        let pre2 = self.fc2.infer(&crate::nn::relu(&pre1));
        let w3row = w3.row(0).to_owned();
        let mut d2 = dscores.view().insert_axis(Axis(1)).dot(&w3row.insert_axis(Axis(0)));
        d2.zip_mut_with(&pre2, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        let mut d1 = d2.dot(&w2);
        d1.zip_mut_with(&pre1, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        Ok(d1.dot(&w1))
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v.extend(self.fc3.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v.extend(self.fc3.params_mut());
        v
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Loss and parameter gradients on a labeled batch, without updating weights.
    pub fn loss_and_grad(&mut self, features: &Array2<f64>, labels: &Array1<f64>) -> Result<LossValue> {
        self.check_width(features)?;
        self.zero_grad();
        let scores = self.forward_train(features);
        let (loss, dscores) = bce_with_logits(labels.view(), scores.view())?;
        self.backward(&dscores);
        Ok(loss)
    }

    /// One SGD step on the combined batch, teachers labeled 1 and students 0.
    ///
    /// Both inputs are plain values: nothing flows back to the student.
    pub fn step(&mut self, teacher: &LogitBatch, student: &LogitBatch, lr: f64) -> Result<LossValue> {
        let x = concatenate(Axis(0), &[teacher.view(), student.view()]).map_err(|e| Error::Shape(format!("discriminator batch: {e}")))?;
        let labels: Array1<f64> = std::iter::repeat_n(1.0, teacher.batch_size())
            .chain(std::iter::repeat_n(0.0, student.batch_size()))
            .collect();
        let loss = self.loss_and_grad(&x, &labels)?;
        let opt = &mut self.optimizer;
        let mut params = self.fc1.params_mut();
        params.extend(self.fc2.params_mut());
        params.extend(self.fc3.params_mut());
        opt.step(params, lr);
        Ok(loss)
    }

    /// Student-side objective `-mean log sigmoid(f(student))` and its gradient
    /// with respect to the student logits. The discriminator is not modified.
    pub fn adversarial_student_loss(&self, student: &LogitBatch) -> Result<(LossValue, Array2<f64>)> {
        let scores = self.scores(student.as_array())?;
        let targets = Array1::ones(scores.len());
        let (loss, dscores) = bce_with_logits(targets.view(), scores.view())?;
        let grad = self.input_gradient(student.as_array(), &dscores)?;
        Ok((loss, grad))
    }

    /// Fraction of samples classified correctly at threshold 0.5.
    pub fn accuracy(&self, teacher: &LogitBatch, student: &LogitBatch) -> Result<f64> {
        let t = self.prob(teacher)?;
        let s = self.prob(student)?;
        let correct = t.iter().filter(|&&p| p > 0.5).count() + s.iter().filter(|&&p| p <= 0.5).count();
        Ok(correct as f64 / (t.len() + s.len()) as f64)
    }

    pub fn state(&self) -> DiscriminatorState {
        let params = self.params();
        DiscriminatorState {
            spec: self.spec.clone(),
            weights: params.iter().map(|p| TensorRecord::from_array(&p.name, &p.value)).collect(),
            optimizer: self.optimizer.state(&params),
        }
    }

    pub fn from_state(state: &DiscriminatorState) -> Result<Self> {
        let mut d = Self::new(&state.spec, 0, state.optimizer.momentum, state.optimizer.weight_decay)?;
        if state.weights.len() != d.params().len() {
            return Err(Error::Checkpoint("discriminator tensor count mismatch".into()));
        }
        for (rec, p) in state.weights.iter().zip(d.params_mut()) {
            rec.load_into(&p.name.clone(), &mut p.value)?;
        }
        d.optimizer = Sgd::from_state(&state.optimizer)?;
        Ok(d)
    }
}
