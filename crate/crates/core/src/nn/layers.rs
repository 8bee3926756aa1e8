use ndarray::{Array, Array1, Array2, Array4, ArrayD, Axis, Dimension, Ix2, Ix4, IxDyn, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Buffer, Mode, Param};

/// 2-D convolution over NHWC activations, no bias (always followed by batch norm).
///
/// Weights are stored `[out, k, k, in]` so the flattened kernel lines up with
/// the im2col row layout `(ky, kx, c)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Array2<f64>,
    in_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = ArrayD::from_shape_simple_fn(IxDyn(&[out_ch, kernel, kernel, in_ch]), || normal.sample(rng));
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn name(&self) -> &str {
        self.weight.name.trim_end_matches(".weight")
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn kernel_matrix(&self) -> Array2<f64> {
        let kkc = self.kernel * self.kernel * self.in_ch;
        self.weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv weight is 4-d")
            .to_shape((self.out_ch, kkc))
            .expect("contiguous conv weight")
            .into_owned()
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.in_ch, "conv `{}` channel mismatch", self.name());
        let (ho, wo) = self.out_hw(h, w);
        let k = self.kernel;
        let kkc = k * k * c;
        let xs = x.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let mut cols = Array2::<f64>::zeros((n * ho * wo, kkc));
        let dst = cols.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * kkc;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let s = ((b * h + iy as usize) * w + ix as usize) * c;
                            let d = row + (ky * k + kx) * c;
                            dst[d..d + c].copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, in_dim: (usize, usize, usize, usize)) -> Array4<f64> {
        let (n, h, w, c) = in_dim;
        let (ho, wo) = self.out_hw(h, w);
        let k = self.kernel;
        let kkc = k * k * c;
        let mut dx = Array4::<f64>::zeros(in_dim);
        let out = dx.as_slice_mut().expect("fresh array");
        let src = dcols.as_slice().expect("standard layout");
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * kkc;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let d = ((b * h + iy as usize) * w + ix as usize) * c;
                            let s = row + (ky * k + kx) * c;
                            for (o, v) in out[d..d + c].iter_mut().zip(&src[s..s + c]) {
                                *o += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, cols: &Array2<f64>, n: usize, ho: usize, wo: usize) -> Array4<f64> {
        let y = cols.dot(&self.kernel_matrix().t());
        y.into_shape_with_order((n, ho, wo, self.out_ch))
            .expect("matmul output is contiguous")
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, h, w, _) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        self.apply(&self.im2col(x), n, ho, wo)
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let (n, h, w, c) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let y = self.apply(&cols, n, ho, wo);
        self.cache = Some(ConvCache {
            cols,
            in_dim: (n, h, w, c),
        });
        y
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("Conv2d::backward without a training forward pass");
        let m = cache.cols.nrows();
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((m, self.out_ch))
            .expect("contiguous upstream gradient");
        let dw = dy2.t().dot(&cache.cols);
        let mut grad = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_ch, dw.ncols()))
            .expect("contiguous grad");
        grad += &dw;
        let dcols = dy2.dot(&self.kernel_matrix());
        self.col2im(&dcols, cache.in_dim)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight]
    }
}

/// Batch normalization over the channel (last) axis of NHWC activations.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    dim: (usize, usize, usize, usize),
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        let vec = |v: f64| ArrayD::from_elem(IxDyn(&[channels]), v);
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec(1.0)),
            beta: Param::new(format!("{name}.beta"), vec(0.0)),
            running_mean: Buffer {
                name: format!("{name}.running_mean"),
                value: vec(0.0),
            },
            running_var: Buffer {
                name: format!("{name}.running_var"),
                value: vec(1.0),
            },
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channel_vec(a: &ArrayD<f64>) -> Array1<f64> {
        a.view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("1-d channel vector")
            .to_owned()
    }

    pub fn infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let gamma = Self::channel_vec(&self.gamma.value);
        let beta = Self::channel_vec(&self.beta.value);
        let mean = Self::channel_vec(&self.running_mean.value);
        let var = Self::channel_vec(&self.running_var.value);
        let scale = &gamma / &var.mapv(|v| (v + self.eps).sqrt());
        let shift = &beta - &(&mean * &scale);
        let mut y = x.to_owned();
        Zip::from(y.lanes_mut(Axis(3))).for_each(|mut lane| {
            lane *= &scale;
            lane += &shift;
        });
        y
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Array4<f64> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let dim = x.dim();
        let c = dim.3;
        let m = dim.0 * dim.1 * dim.2;
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((m, c))
            .expect("contiguous activations");
        let mean = x2.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x2 - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &inv_std;
        let gamma = Self::channel_vec(&self.gamma.value);
        let beta = Self::channel_vec(&self.beta.value);
        let y = &(&xhat * &gamma) + &beta;

        let unbiased = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
        let mom = self.momentum;
        Zip::from(&mut self.running_mean.value)
            .and(mean.view().into_dyn())
            .for_each(|r, &s| *r = (1.0 - mom) * *r + mom * s);
        Zip::from(&mut self.running_var.value)
            .and(var.view().into_dyn())
            .for_each(|r, &s| *r = (1.0 - mom) * *r + mom * s * unbiased);

        self.cache = Some(BnCache { xhat, inv_std, dim });
        y.into_shape_with_order(dim).expect("contiguous output")
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("BatchNorm2d::backward without a training forward pass");
        let (m, c) = cache.xhat.dim();
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((m, c))
            .expect("contiguous upstream gradient");
        let gamma = Self::channel_vec(&self.gamma.value);
        let dgamma = (&dy2 * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy2.sum_axis(Axis(0));
        self.gamma.grad += &dgamma.view().into_dyn();
        self.beta.grad += &dbeta.view().into_dyn();

        let dxhat = &dy2 * &gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mf = m as f64;
        let dx = (&(&(&dxhat * mf) - &sum_dxhat) - &(&cache.xhat * &sum_dxhat_xhat)) * &(&cache.inv_std / mf);
        dx.into_shape_with_order(cache.dim).expect("contiguous gradient")
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        vec![&self.running_mean, &self.running_var]
    }
}

/// Fully connected layer `y = x Wᵀ + b`, weights `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = ArrayD::from_shape_simple_fn(IxDyn(&[outputs, inputs]), || dist.sample(rng));
        let bias = ArrayD::from_shape_simple_fn(IxDyn(&[outputs]), || dist.sample(rng));
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn w(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d linear weight")
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        x.dot(&self.w().t()) + b
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Array2<f64> {
        if mode == Mode::Train {
            self.cache = Some(x.to_owned());
        }
        self.infer(x)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache.take().expect("Linear::backward without a training forward pass");
        let dw = dy.t().dot(&x);
        self.weight.grad += &dw.view().into_dyn();
        self.bias.grad += &dy.sum_axis(Axis(0)).view().into_dyn();
        dy.dot(&self.w())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// ReLU that remembers its activation mask for the backward pass.
#[derive(Debug, Clone)]
pub struct Relu<D: Dimension> {
    mask: Option<Array<bool, D>>,
}

impl<D: Dimension> Default for Relu<D> {
    fn default() -> Self {
        Self { mask: None }
    }
}

impl<D: Dimension> Relu<D> {
    pub fn forward(&mut self, x: &Array<f64, D>, mode: Mode) -> Array<f64, D> {
        if mode == Mode::Train {
            self.mask = Some(x.mapv(|v| v > 0.0));
        }
        relu(x)
    }

    pub fn backward(&mut self, dy: &Array<f64, D>) -> Array<f64, D> {
        let mask = self.mask.take().expect("Relu::backward without a training forward pass");
        let mut dx = dy.to_owned();
        Zip::from(&mut dx).and(&mask).for_each(|d, &m| {
            if !m {
                *d = 0.0;
            }
        });
        dx
    }
}

/// `(N, H, W, C) -> (N, C)`.
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, h, w, c) = x.dim();
    x.to_shape((n, h * w, c))
        .expect("reshape for pooling")
        .mean_axis(Axis(1))
        .expect("non-empty spatial extent")
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let (n, h, w, c) = dim;
    let scale = 1.0 / (h * w) as f64;
    let mut dx = Array4::<f64>::zeros(dim);
    for b in 0..n {
        for ch in 0..c {
            let g = dy[[b, ch]] * scale;
            dx.slice_mut(ndarray::s![b, .., .., ch]).fill(g);
        }
    }
    dx
}
