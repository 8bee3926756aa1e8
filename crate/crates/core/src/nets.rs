//! Small residual CNNs used as teachers and students.
//!
//! Every tier shares one layout: a 3x3 stem, two stages of basic residual
//! blocks (the second downsamples by 2), global average pooling and a linear
//! classifier. Tiers differ only in width and depth, so capacity is ordered
//! `teacher-large > teacher-medium > student-small > student-tiny`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayD, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, global_avg_pool_backward, BatchNorm2d, Buffer, Conv2d, Linear, Mode, Param, Relu, TensorRecord};
use crate::tensor::{ImageBatch, LogitBatch};

/// Architecture families known to [`build_model`].
pub const ARCHITECTURES: &[&str] = &["desk-resnet"];

pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityTier {
    TeacherLarge,
    TeacherMedium,
    StudentSmall,
    StudentTiny,
}

impl CapacityTier {
    /// `(stage widths, blocks per stage)`.
    fn layout(self) -> ([usize; 2], [usize; 2]) {
        match self {
            CapacityTier::TeacherLarge => ([16, 32], [2, 2]),
            CapacityTier::TeacherMedium => ([12, 24], [2, 1]),
            CapacityTier::StudentSmall => ([8, 16], [1, 1]),
            CapacityTier::StudentTiny => ([4, 8], [1, 1]),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CapacityTier::TeacherLarge => "teacher-large",
            CapacityTier::TeacherMedium => "teacher-medium",
            CapacityTier::StudentSmall => "student-small",
            CapacityTier::StudentTiny => "student-tiny",
        }
    }
}

impl fmt::Display for CapacityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CapacityTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher-large" => Ok(CapacityTier::TeacherLarge),
            "teacher-medium" => Ok(CapacityTier::TeacherMedium),
            "student-small" => Ok(CapacityTier::StudentSmall),
            "student-tiny" => Ok(CapacityTier::StudentTiny),
            other => Err(Error::Config(format!("unknown capacity tier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Architecture family, one of [`ARCHITECTURES`].
    pub name: String,
    pub num_classes: usize,
    pub input_resolution: usize,
    pub capacity_tier: CapacityTier,
}

impl ModelSpec {
    pub fn new(tier: CapacityTier, num_classes: usize, input_resolution: usize) -> Self {
        Self {
            name: ARCHITECTURES[0].to_owned(),
            num_classes,
            input_resolution,
            capacity_tier: tier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ARCHITECTURES.contains(&self.name.as_str()) {
            return Err(Error::Config(format!(
                "unknown architecture `{}` (known: {})",
                self.name,
                ARCHITECTURES.join(", ")
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.input_resolution < 8 {
            return Err(Error::Config(format!(
                "input_resolution must be >= 8, got {}",
                self.input_resolution
            )));
        }
        Ok(())
    }
}

/// Which convolution to pick out for weight diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvAnchor {
    First,
    Middle,
    Last,
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu<Ix4>,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
    relu_out: Relu<Ix4>,
}

impl BasicBlock {
    fn new(name: &str, in_ch: usize, out_ch: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = Conv2d::new(&format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, rng);
        let conv2 = Conv2d::new(&format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, rng);
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(&format!("{name}.shortcut.conv"), in_ch, out_ch, 1, stride, 0, rng),
                BatchNorm2d::new(&format!("{name}.shortcut.bn"), out_ch),
            )
        });
        Self {
            conv1,
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), out_ch),
            relu1: Relu::default(),
            conv2,
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_ch),
            shortcut,
            relu_out: Relu::default(),
        }
    }

    fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let h = crate::nn::relu(&self.bn1.infer(&self.conv1.infer(x)));
        let h = self.bn2.infer(&self.conv2.infer(&h));
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.infer(&conv.infer(x)),
            None => x.to_owned(),
        };
        crate::nn::relu(&(h + skip))
    }

    fn forward(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let h = self.conv1.forward(x, Mode::Train);
        let h = self.bn1.forward(&h, Mode::Train);
        let h = self.relu1.forward(&h, Mode::Train);
        let h = self.conv2.forward(&h, Mode::Train);
        let h = self.bn2.forward(&h, Mode::Train);
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x, Mode::Train);
                bn.forward(&s, Mode::Train)
            }
            None => x.to_owned(),
        };
        self.relu_out.forward(&(h + skip), Mode::Train)
    }

    fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let d = self.relu_out.backward(dy);
        let dskip = match &mut self.shortcut {
            Some((conv, bn)) => conv.backward(&bn.backward(&d)),
            None => d.clone(),
        };
        let h = self.bn2.backward(&d);
        let h = self.conv2.backward(&h);
        let h = self.relu1.backward(&h);
        let h = self.bn1.backward(&h);
        self.conv1.backward(&h) + dskip
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        if let Some((conv, bn)) = &self.shortcut {
            v.extend(conv.params());
            v.extend(bn.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some((conv, bn)) = &mut self.shortcut {
            v.extend(conv.params_mut());
            v.extend(bn.params_mut());
        }
        v
    }

    fn buffers(&self) -> Vec<&Buffer> {
        let mut v = self.bn1.buffers();
        v.extend(self.bn2.buffers());
        if let Some((_, bn)) = &self.shortcut {
            v.extend(bn.buffers());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut v = self.bn1.buffers_mut();
        v.extend(self.bn2.buffers_mut());
        if let Some((_, bn)) = &mut self.shortcut {
            v.extend(bn.buffers_mut());
        }
        v
    }
}

/// A trainable residual classifier.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stem_relu: Relu<Ix4>,
    blocks: Vec<BasicBlock>,
    fc: Linear,
    pooled_dim: Option<(usize, usize, usize, usize)>,
}

/// Builds a freshly initialized model; identical `(spec, seed)` give identical weights.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (widths, depths) = spec.capacity_tier.layout();
    let stem = Conv2d::new("stem.conv", INPUT_CHANNELS, widths[0], 3, 1, 1, &mut rng);
    let stem_bn = BatchNorm2d::new("stem.bn", widths[0]);
    let mut blocks = Vec::new();
    let mut in_ch = widths[0];
    for (stage, (&width, &depth)) in widths.iter().zip(depths.iter()).enumerate() {
        for b in 0..depth {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let name = format!("stage{}.block{}", stage + 1, b);
            blocks.push(BasicBlock::new(&name, in_ch, width, stride, &mut rng));
            in_ch = width;
        }
    }
    let fc = Linear::new("fc", in_ch, spec.num_classes, &mut rng);
    Ok(Model {
        spec: spec.clone(),
        stem,
        stem_bn,
        stem_relu: Relu::default(),
        blocks,
        fc,
        pooled_dim: None,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.fc.outputs()
    }

    /// Width of the penultimate activation (the classifier's input width).
    pub fn embedding_dim(&self) -> usize {
        self.fc.inputs()
    }

    pub fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        let (n, h, w, c) = batch.dim();
        let r = self.spec.input_resolution;
        if h != r || w != r {
            return Err(Error::Shape(format!(
                "model `{}` expects {r}x{r} inputs, got {h}x{w}",
                self.spec.capacity_tier
            )));
        }
        if c != INPUT_CHANNELS {
            return Err(Error::Shape(format!("expected {INPUT_CHANNELS} channels, got {c}")));
        }
        if n == 0 {
            return Err(Error::Empty("image batch".into()));
        }
        Ok(())
    }

    fn features(&self, batch: &ImageBatch) -> Array4<f64> {
        let mut h = crate::nn::relu(&self.stem_bn.infer(&self.stem.infer(batch)));
        for block in &self.blocks {
            h = block.infer(&h);
        }
        h
    }

    /// Inference-mode logits; deterministic and side-effect free.
    pub fn forward_logits(&self, batch: &ImageBatch) -> Result<LogitBatch> {
        let emb = self.forward_embedding(batch)?;
        LogitBatch::new(self.fc.infer(&emb))
    }

    /// Inference-mode penultimate activations, `(N, embedding_dim)`.
    pub fn forward_embedding(&self, batch: &ImageBatch) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        Ok(global_avg_pool(&self.features(batch)))
    }

    /// Training-mode forward: batch statistics, caches kept for [`Model::backward`].
    pub fn forward_train(&mut self, batch: &ImageBatch) -> Result<LogitBatch> {
        self.check_batch(batch)?;
        let h = self.stem.forward(batch, Mode::Train);
        let h = self.stem_bn.forward(&h, Mode::Train);
        let mut h = self.stem_relu.forward(&h, Mode::Train);
        for block in &mut self.blocks {
            h = block.forward(&h);
        }
        self.pooled_dim = Some(h.dim());
        let emb = global_avg_pool(&h);
        LogitBatch::new(self.fc.forward(&emb, Mode::Train))
    }

    /// Accumulates parameter gradients for `d loss / d logits` of the last training forward.
    pub fn backward(&mut self, dlogits: &Array2<f64>) {
        let demb = self.fc.backward(dlogits);
        let dim = self.pooled_dim.take().expect("Model::backward without a training forward pass");
        let mut d = global_avg_pool_backward(&demb, dim);
        for block in self.blocks.iter_mut().rev() {
            d = block.backward(&d);
        }
        let d = self.stem_relu.backward(&d);
        let d = self.stem_bn.backward(&d);
        let _ = self.stem.backward(&d);
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All trainable parameters in a stable order.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.stem.params();
        v.extend(self.stem_bn.params());
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.fc.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.stem.params_mut();
        v.extend(self.stem_bn.params_mut());
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.fc.params_mut());
        v
    }

    /// Parameters of everything except the classifier head.
    pub fn backbone_params(&self) -> Vec<&Param> {
        let n = self.params().len() - 2;
        self.params().into_iter().take(n).collect()
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        let mut v = self.stem_bn.buffers();
        for b in &self.blocks {
            v.extend(b.buffers());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut v = self.stem_bn.buffers_mut();
        for b in &mut self.blocks {
            v.extend(b.buffers_mut());
        }
        v
    }

    /// Named weight tensors (parameters only) in stable order.
    pub fn named_weights(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.params().into_iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Convolution layer names in forward order, shortcuts included.
    pub fn conv_layer_names(&self) -> Vec<String> {
        let mut v = vec![self.stem.name().to_owned()];
        for b in &self.blocks {
            v.push(b.conv1.name().to_owned());
            v.push(b.conv2.name().to_owned());
            if let Some((conv, _)) = &b.shortcut {
                v.push(conv.name().to_owned());
            }
        }
        v
    }

    /// Main-path convolution names (no projection shortcuts).
    fn main_path_convs(&self) -> Vec<String> {
        let mut v = vec![self.stem.name().to_owned()];
        for b in &self.blocks {
            v.push(b.conv1.name().to_owned());
            v.push(b.conv2.name().to_owned());
        }
        v
    }

    pub fn anchor_layer(&self, anchor: ConvAnchor) -> String {
        let convs = self.main_path_convs();
        match anchor {
            ConvAnchor::First => convs[0].clone(),
            ConvAnchor::Middle => convs[convs.len() / 2].clone(),
            ConvAnchor::Last => convs[convs.len() - 1].clone(),
        }
    }

    /// Parameters followed by buffers, as serializable records.
    pub fn state_dict(&self) -> Vec<TensorRecord> {
        let mut v: Vec<TensorRecord> = self
            .params()
            .into_iter()
            .map(|p| TensorRecord::from_array(&p.name, &p.value))
            .collect();
        v.extend(self.buffers().into_iter().map(|b| TensorRecord::from_array(&b.name, &b.value)));
        v
    }

    pub fn load_state_dict(&mut self, records: &[TensorRecord]) -> Result<()> {
        let n_params = self.params().len();
        let n_buffers = self.buffers().len();
        if records.len() != n_params + n_buffers {
            return Err(Error::Checkpoint(format!(
                "state has {} tensors, model `{}` expects {}",
                records.len(),
                self.spec.capacity_tier,
                n_params + n_buffers
            )));
        }
        for (rec, p) in records.iter().zip(self.params_mut()) {
            rec.load_into(&p.name.clone(), &mut p.value)?;
        }
        for (rec, b) in records[n_params..].iter().zip(self.buffers_mut()) {
            rec.load_into(&b.name.clone(), &mut b.value)?;
        }
        Ok(())
    }

    pub fn head(&self) -> &Linear {
        &self.fc
    }

    /// Swaps in a new classifier head, e.g. for a downstream dataset.
    pub fn set_head(&mut self, head: Linear) -> Result<()> {
        if head.inputs() != self.embedding_dim() {
            return Err(Error::Shape(format!(
                "head expects {} inputs, backbone yields {}",
                head.inputs(),
                self.embedding_dim()
            )));
        }
        self.spec.num_classes = head.outputs();
        self.fc = head;
        Ok(())
    }

    /// Fresh head sized for `num_classes`, initialized from `seed`.
    pub fn new_head(&self, num_classes: usize, seed: u64) -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Linear::new("fc", self.embedding_dim(), num_classes, &mut rng)
    }
}
