//! Datasets, training augmentation and the single-crop evaluation transform.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use ndarray::{s, stack, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::ImageBatch;

/// Environment variable naming the directory that holds on-disk datasets.
pub const DATA_ROOT_ENV: &str = "MEAL_DATA_ROOT";

/// Eval images are resized by this factor before the center crop (256/224).
pub const EVAL_RESIZE_RATIO: f64 = 256.0 / 224.0;

pub const CROP_SCALE: (f64, f64) = (0.08, 1.0);
pub const CROP_RATIO: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelArity {
    Single,
    Multi,
}

/// Per-channel normalization applied after cropping and resizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub const CIFAR10: Normalization = Normalization {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };

    pub const HALF: Normalization = Normalization {
        mean: [0.5, 0.5, 0.5],
        std: [0.25, 0.25, 0.25],
    };

    pub fn apply(&self, image: &mut Array3<f64>) {
        for c in 0..3 {
            let (m, sd) = (self.mean[c], self.std[c]);
            image.slice_mut(s![.., .., c]).mapv_inplace(|v| (v - m) / sd);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub split: Split,
    pub num_classes: usize,
    /// Side length of the tensors handed to models.
    pub resolution: usize,
    pub normalization: Normalization,
    pub label_arity: LabelArity,
}

/// An 8-bit RGB image stored row-major HWC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn to_array(&self) -> Array3<f64> {
        Array3::from_shape_vec((self.height, self.width, 3), self.pixels.clone())
            .expect("pixel buffer matches dimensions")
            .mapv(|v| v as f64 / 255.0)
    }

    pub fn from_array(a: &Array3<f64>) -> Self {
        let (h, w, _) = a.dim();
        Self {
            height: h,
            width: w,
            pixels: a.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single(Vec<usize>),
    /// One binary row of length `num_classes` per sample.
    Multi(Array2<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(a) => a.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Read access to images only. The distillation loop is handed this view of
/// the training set, so the soft-label loss path cannot see ground truth.
pub trait ImageSource {
    fn spec(&self) -> &DatasetSpec;
    fn len(&self) -> usize;
    fn image(&self, index: usize) -> &RawImage;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    spec: DatasetSpec,
    images: Vec<RawImage>,
    labels: Labels,
}

impl ImageSource for Dataset {
    fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    fn len(&self) -> usize {
        self.images.len()
    }

    fn image(&self, index: usize) -> &RawImage {
        &self.images[index]
    }
}

impl Dataset {
    pub fn new(spec: DatasetSpec, images: Vec<RawImage>, labels: Labels) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
        }
        match (&labels, spec.label_arity) {
            (Labels::Single(v), LabelArity::Single) => {
                if let Some(&bad) = v.iter().find(|&&y| y >= spec.num_classes) {
                    return Err(Error::Label(format!("label {bad} out of range for {} classes", spec.num_classes)));
                }
            }
            (Labels::Multi(a), LabelArity::Multi) => {
                if a.ncols() != spec.num_classes {
                    return Err(Error::Shape(format!(
                        "multi-label width {} != {} classes",
                        a.ncols(),
                        spec.num_classes
                    )));
                }
                if a.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Label("multi-label targets must be 0 or 1".into()));
                }
            }
            _ => return Err(Error::Config("label arity does not match labels".into())),
        }
        for (i, img) in images.iter().enumerate() {
            if img.pixels.len() != img.height * img.width * 3 {
                return Err(Error::Shape(format!("image {i}: pixel buffer has wrong length")));
            }
        }
        Ok(Self { spec, images, labels })
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Class indices; an error for multi-label datasets.
    pub fn class_labels(&self) -> Result<&[usize]> {
        match &self.labels {
            Labels::Single(v) => Ok(v),
            Labels::Multi(_) => Err(Error::Label(format!("dataset `{}` is multi-label", self.spec.name))),
        }
    }

    pub fn multi_labels(&self) -> Result<&Array2<f64>> {
        match &self.labels {
            Labels::Multi(a) => Ok(a),
            Labels::Single(_) => Err(Error::Label(format!("dataset `{}` is single-label", self.spec.name))),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let images = indices.iter().map(|&i| self.images[i].clone()).collect();
        let labels = match &self.labels {
            Labels::Single(v) => Labels::Single(indices.iter().map(|&i| v[i]).collect()),
            Labels::Multi(a) => Labels::Multi(a.select(Axis(0), indices)),
        };
        Self {
            spec: self.spec.clone(),
            images,
            labels,
        }
    }

    /// Same images with replaced labels.
    pub fn with_labels(&self, labels: Labels) -> Result<Self> {
        Self::new(self.spec.clone(), self.images.clone(), labels)
    }

    /// Same images with the label list randomly permuted.
    pub fn with_shuffled_labels(&self, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Shuffle, u64::MAX);
        let labels = match &self.labels {
            Labels::Single(v) => {
                let mut v = v.clone();
                v.shuffle(&mut rng);
                Labels::Single(v)
            }
            Labels::Multi(a) => {
                let mut order: Vec<usize> = (0..a.nrows()).collect();
                order.shuffle(&mut rng);
                Labels::Multi(a.select(Axis(0), &order))
            }
        };
        Self {
            spec: self.spec.clone(),
            images: self.images.clone(),
            labels,
        }
    }

    /// Re-labels as a multi-hot dataset, e.g. from [`SyntheticConfig::generate_multilabel`].
    pub fn into_spec(mut self, spec: DatasetSpec) -> Result<Self> {
        self.spec = spec;
        Self::new(self.spec, self.images, self.labels)
    }

    /// Per-class sample counts (single-label only).
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.spec.num_classes];
        for &y in self.class_labels()? {
            counts[y] += 1;
        }
        Ok(counts)
    }
}

/// Where a training crop came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// Crop area over source area.
    pub area_fraction: f64,
    /// Crop width over crop height.
    pub aspect_ratio: f64,
    pub flip: bool,
}

/// Bilinear resize with half-pixel centers (no antialiasing).
pub fn resize_bilinear(image: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = image.dim();
    if (h, w) == (out_h, out_w) {
        return image.to_owned();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let coord = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = Array3::zeros((out_h, out_w, c));
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, w);
            for ch in 0..c {
                let top = image[[y0, x0, ch]] * (1.0 - fx) + image[[y0, x1, ch]] * fx;
                let bot = image[[y1, x0, ch]] * (1.0 - fx) + image[[y1, x1, ch]] * fx;
                out[[oy, ox, ch]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn center_crop_params(h: usize, w: usize) -> (usize, usize, usize, usize) {
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < CROP_RATIO.0 {
        (((w as f64 / CROP_RATIO.0).round() as usize).clamp(1, h), w)
    } else if in_ratio > CROP_RATIO.1 {
        (h, ((h as f64 * CROP_RATIO.1).round() as usize).clamp(1, w))
    } else {
        (h, w)
    };
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

/// Samples a crop rectangle: area fraction in [0.08, 1], log-uniform aspect in [3/4, 4/3].
pub fn sample_crop<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lr0, lr1) = (CROP_RATIO.0.ln(), CROP_RATIO.1.ln());
    for _ in 0..10 {
        let target = area * rng.random_range(CROP_SCALE.0..=CROP_SCALE.1);
        let ratio = rng.random_range(lr0..=lr1).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    debug!("crop sampling exhausted its attempts on a {h}x{w} image; using center crop");
    center_crop_params(h, w)
}

/// Random-resized-crop to `resolution` plus a fair-coin horizontal flip.
/// Pixel values stay in [0, 1]; normalization happens when batching.
pub fn augment_train<R: Rng + ?Sized>(image: &Array3<f64>, resolution: usize, rng: &mut R) -> (Array3<f64>, CropParams) {
    let (h, w, _) = image.dim();
    let (top, left, ch, cw) = if h == 0 || w == 0 || h * w < 2 {
        warn!("degenerate {h}x{w} source image; falling back to center crop");
        (0, 0, h.max(1), w.max(1))
    } else {
        sample_crop(h, w, rng)
    };
    let flip = rng.random_bool(0.5);
    let (ch, cw) = (ch.min(h.max(1)), cw.min(w.max(1)));
    let crop = if h == 0 || w == 0 {
        Array3::zeros((1, 1, 3))
    } else {
        image.slice(s![top..top + ch, left..left + cw, ..]).to_owned()
    };
    let mut out = resize_bilinear(&crop, resolution, resolution);
    if flip {
        out.invert_axis(Axis(1));
        out = out.as_standard_layout().into_owned();
    }
    let params = CropParams {
        top,
        left,
        height: ch,
        width: cw,
        area_fraction: (ch * cw) as f64 / (h.max(1) * w.max(1)) as f64,
        aspect_ratio: cw as f64 / ch as f64,
        flip,
    };
    (out, params)
}

/// Deterministic single-crop transform: resize the short side to
/// `round(resolution * 256 / 224)`, then take the central `resolution` square.
pub fn transform_eval(image: &Array3<f64>, resolution: usize) -> Array3<f64> {
    let (h, w, _) = image.dim();
    let short = ((resolution as f64 * EVAL_RESIZE_RATIO).round() as usize).max(resolution);
    let (rh, rw) = if h <= w {
        (short, ((w as f64 * short as f64 / h as f64).round() as usize).max(resolution))
    } else {
        (((h as f64 * short as f64 / w as f64).round() as usize).max(resolution), short)
    };
    let resized = resize_bilinear(image, rh, rw);
    let top = (rh - resolution) / 2;
    let left = (rw - resolution) / 2;
    resized.slice(s![top..top + resolution, left..left + resolution, ..]).to_owned()
}

fn stack_batch(images: Vec<Array3<f64>>) -> ImageBatch {
    let views: Vec<_> = images.iter().map(|a| a.view()).collect();
    stack(Axis(0), &views).expect("equal image sizes")
}

/// Augmented, normalized training batch for the given sample indices.
pub fn train_batch<R: Rng + ?Sized>(src: &dyn ImageSource, indices: &[usize], rng: &mut R) -> (ImageBatch, Vec<CropParams>) {
    let spec = src.spec();
    let mut images = Vec::with_capacity(indices.len());
    let mut crops = Vec::with_capacity(indices.len());
    for &i in indices {
        let (mut img, crop) = augment_train(&src.image(i).to_array(), spec.resolution, rng);
        spec.normalization.apply(&mut img);
        images.push(img);
        crops.push(crop);
    }
    (stack_batch(images), crops)
}

/// Single-crop, normalized evaluation batch.
pub fn eval_batch(src: &dyn ImageSource, indices: &[usize]) -> ImageBatch {
    let spec = src.spec();
    let images = indices
        .iter()
        .map(|&i| {
            let mut img = transform_eval(&src.image(i).to_array(), spec.resolution);
            spec.normalization.apply(&mut img);
            img
        })
        .collect();
    stack_batch(images)
}

/// Seed-deterministic visiting order of the training split for one epoch.
pub fn epoch_permutation(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch as u64));
    order
}

/// Contiguous index chunks of at most `batch_size`.
pub fn chunks(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size.max(1))
}

/// Procedurally generated, class-separable images for tests and desk runs.
///
/// Classes come in pairs that share color and orientation and differ only in
/// grating frequency, standing in for semantically similar categories. Each
/// image holds one object of its class inside a soft elliptical mask and, with
/// probability `distractor_prob`, a smaller occluding object of another class,
/// so random crops can land mostly on the wrong object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub source_resolution: usize,
    pub resolution: usize,
    pub noise: f64,
    pub distractor_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 100,
            source_resolution: 20,
            resolution: 16,
            noise: 0.12,
            distractor_prob: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct ClassPattern {
    orientation: f64,
    frequency: f64,
    color: [f64; 3],
}

impl SyntheticConfig {
    pub fn new(num_classes: usize, samples_per_class: usize, seed: u64) -> Self {
        Self {
            num_classes,
            samples_per_class,
            seed,
            ..Self::default()
        }
    }

    /// Low noise and no distractors: a tiny network separates the classes
    /// within a few epochs.
    pub fn fixture(num_classes: usize, samples_per_class: usize, seed: u64) -> Self {
        Self {
            noise: 0.05,
            distractor_prob: 0.0,
            ..Self::new(num_classes, samples_per_class, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.samples_per_class < 1 {
            return Err(Error::Config(format!(
                "synthetic dataset needs >= 2 classes and >= 1 sample per class (got {} x {})",
                self.num_classes, self.samples_per_class
            )));
        }
        if self.source_resolution < 4 || self.resolution < 1 {
            return Err(Error::Config("synthetic resolutions are too small".into()));
        }
        Ok(())
    }

    fn patterns(&self) -> Vec<ClassPattern> {
        let mut rng = stream_rng(self.seed, Stream::Synthetic, u64::MAX);
        let groups = self.num_classes.div_ceil(2);
        let bases: Vec<(f64, f64, [f64; 3])> = (0..groups)
            .map(|g| {
                let orientation = PI * (g as f64 + rng.random_range(0.0..0.6)) / groups as f64;
                let frequency = rng.random_range(1.6..2.6);
                let color = [
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                ];
                (orientation, frequency, color)
            })
            .collect();
        (0..self.num_classes)
            .map(|c| {
                let (orientation, frequency, color) = bases[c / 2];
                ClassPattern {
                    orientation: orientation + if c % 2 == 1 { 0.25 } else { 0.0 },
                    frequency: if c % 2 == 1 { frequency * 1.45 } else { frequency },
                    color,
                }
            })
            .collect()
    }

    fn spec(&self, split: Split, arity: LabelArity) -> DatasetSpec {
        DatasetSpec {
            name: "synthetic".into(),
            split,
            num_classes: self.num_classes,
            resolution: self.resolution,
            normalization: Normalization::HALF,
            label_arity: arity,
        }
    }

    /// Images, main classes and distractor classes.
    fn render(&self, split: Split) -> (Vec<RawImage>, Vec<usize>, Vec<Option<usize>>) {
        let patterns = self.patterns();
        let split_index = match split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        let mut rng = stream_rng(self.seed, Stream::Synthetic, split_index);
        let noise = Normal::new(0.0, self.noise.max(1e-12)).expect("positive noise");
        let s = self.source_resolution;
        let sf = s as f64;
        let n = self.num_classes * self.samples_per_class;
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut distractors = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.num_classes;
            let mut img = Array3::<f64>::from_elem((s, s, 3), 0.5);
            let paint = |pattern: &ClassPattern, cy: f64, cx: f64, ry: f64, rx: f64, phase: f64, amp: f64, img: &mut Array3<f64>| {
                let (cos, sin) = (pattern.orientation.cos(), pattern.orientation.sin());
                for y in 0..s {
                    for x in 0..s {
                        let dy = (y as f64 + 0.5 - cy) / ry;
                        let dx = (x as f64 + 0.5 - cx) / rx;
                        let r2 = dy * dy + dx * dx;
                        let mask = (1.0 - r2).clamp(0.0, 0.25) * 4.0;
                        if mask <= 0.0 {
                            continue;
                        }
                        let t = 2.0 * PI * pattern.frequency * (x as f64 * cos + y as f64 * sin) / sf + phase;
                        let g = 0.5 + 0.5 * amp * t.sin();
                        for ch in 0..3 {
                            let v = pattern.color[ch] * g;
                            img[[y, x, ch]] = img[[y, x, ch]] * (1.0 - mask) + v * mask;
                        }
                    }
                }
            };
            let (cy, cx) = (rng.random_range(0.35..0.65) * sf, rng.random_range(0.35..0.65) * sf);
            let (ry, rx) = (rng.random_range(0.45..0.7) * sf, rng.random_range(0.45..0.7) * sf);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.6..1.0);
            paint(&patterns[class], cy, cx, ry, rx, phase, amp, &mut img);
            let distractor = if rng.random_bool(self.distractor_prob.clamp(0.0, 1.0)) {
                let other = (class + rng.random_range(1..self.num_classes)) % self.num_classes;
                let (dy, dx) = (rng.random_range(0.1..0.9) * sf, rng.random_range(0.1..0.9) * sf);
                let r = rng.random_range(0.22..0.34) * sf;
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.6..1.0);
                paint(&patterns[other], dy, dx, r, r, phase, amp, &mut img);
                Some(other)
            } else {
                None
            };
            img.mapv_inplace(|v| v + noise.sample(&mut rng));
            images.push(RawImage::from_array(&img));
            labels.push(class);
            distractors.push(distractor);
        }
        (images, labels, distractors)
    }

    pub fn generate(&self, split: Split) -> Result<Dataset> {
        self.validate()?;
        let (images, labels, _) = self.render(split);
        Dataset::new(self.spec(split, LabelArity::Single), images, Labels::Single(labels))
    }

    /// Multi-hot relabeling: main object plus distractor (when present).
    pub fn generate_multilabel(&self, split: Split) -> Result<Dataset> {
        self.validate()?;
        let (images, labels, distractors) = self.render(split);
        let mut targets = Array2::zeros((images.len(), self.num_classes));
        for (i, (&y, d)) in labels.iter().zip(&distractors).enumerate() {
            targets[[i, y]] = 1.0;
            if let Some(d) = d {
                targets[[i, *d]] = 1.0;
            }
        }
        let mut spec = self.spec(split, LabelArity::Multi);
        spec.name = "synthetic-multilabel".into();
        Dataset::new(spec, images, Labels::Multi(targets))
    }
}

/// Balanced synthetic training split with the easy fixture preset.
pub fn synthetic_dataset(num_classes: usize, samples_per_class: usize, seed: u64) -> Result<Dataset> {
    SyntheticConfig::fixture(num_classes, samples_per_class, seed).generate(Split::Train)
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

fn cifar_dir(root: &Path) -> PathBuf {
    let nested = root.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Loads the CIFAR-10 binary distribution. `train` reads the five data
/// batches, `val`/`test` read the test batch.
pub fn load_cifar10(root: &Path, split: Split) -> Result<Dataset> {
    const RECORD: usize = 1 + 3072;
    let dir = cifar_dir(root);
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Val | Split::Test => vec![dir.join("test_batch.bin")],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        if !file.is_file() {
            return Err(Error::MissingFile(file));
        }
        let bytes = std::fs::read(&file).map_err(|e| Error::io(file.display().to_string(), e))?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::Shape(format!("{}: truncated record", file.display())));
        }
        for rec in bytes.chunks_exact(RECORD) {
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::Label(format!("{}: label {label}", file.display())));
            }
            let planes = &rec[1..];
            let mut pixels = Vec::with_capacity(3072);
            for p in 0..1024 {
                pixels.extend_from_slice(&[planes[p], planes[1024 + p], planes[2048 + p]]);
            }
            images.push(RawImage {
                height: 32,
                width: 32,
                pixels,
            });
            labels.push(label);
        }
    }
    let spec = DatasetSpec {
        name: "cifar10".into(),
        split,
        num_classes: 10,
        resolution: 32,
        normalization: Normalization::CIFAR10,
        label_arity: LabelArity::Single,
    };
    Dataset::new(spec, images, Labels::Single(labels))
}

/// Dataset root from the environment, if set.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}
