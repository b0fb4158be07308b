//! Layer implementations with cached activations and hand-written backward
//! passes. Image tensors are `[N, C, H, W]`; feature tensors are `[N, F]`.

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// A trainable tensor with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

fn expect_rank(context: &str, x: &Tensor, rank: usize) -> Result<()> {
    if x.shape().len() != rank {
        return Err(Error::InvalidArgument(format!(
            "{context} expects a rank-{rank} input, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

fn missing_cache(layer: &str) -> Error {
    Error::Training(format!("{layer} backward called without a cached training forward pass"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(glorot(rng, &[outputs, inputs], inputs, outputs)),
            bias: Param::new(Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        expect_rank("dense", x, 2)?;
        let (n, fi, fo) = (x.batch(), self.inputs(), self.outputs());
        if x.shape()[1] != fi {
            return Err(Error::Dimension {
                context: "dense input",
                expected: fi,
                got: x.shape()[1],
            });
        }
        let mut out = Vec::with_capacity(n * fo);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(n, fi, fo, x.data(), false, self.weight.value.data(), true, 1.0, &mut out);
        Tensor::new(vec![n, fo], out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache("dense"))?;
        let (n, fi, fo) = (x.batch(), self.inputs(), self.outputs());
        if dy.shape() != [n, fo] {
            return Err(Error::InvalidArgument(format!(
                "dense upstream gradient has shape {:?}, expected [{n}, {fo}]",
                dy.shape()
            )));
        }
        gemm(fo, n, fi, dy.data(), true, x.data(), false, 1.0, self.weight.grad.data_mut());
        let db = self.bias.grad.data_mut();
        for i in 0..n {
            for (b, g) in db.iter_mut().zip(dy.row(i)) {
                *b += g;
            }
        }
        let mut dx = vec![0.0; n * fi];
        gemm(n, fo, fi, dy.data(), false, self.weight.value.data(), false, 0.0, &mut dx);
        Tensor::new(vec![n, fi], dx)
    }
}

/// Square-kernel 2-D convolution with zero padding, via im2col and GEMM.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
    input: Option<Tensor>,
}

struct ConvGeometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        Self {
            weight: Param::new(glorot(rng, &[out_channels, in_channels, kernel, kernel], fan_in, fan_out)),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            stride,
            padding,
            input: None,
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        let k = self.weight.value.shape()[2];
        (size + 2 * self.padding - k) / self.stride + 1
    }

    fn geometry(&self, x: &Tensor) -> Result<ConvGeometry> {
        expect_rank("conv2d", x, 4)?;
        let s = self.weight.value.shape();
        let (co, ci, k) = (s[0], s[1], s[2]);
        let xs = x.shape();
        if xs[1] != ci {
            return Err(Error::Dimension {
                context: "conv2d input channels",
                expected: ci,
                got: xs[1],
            });
        }
        if xs[2] + 2 * self.padding < k || xs[3] + 2 * self.padding < k {
            return Err(Error::InvalidArgument(format!("conv2d input {xs:?} is smaller than the kernel")));
        }
        Ok(ConvGeometry {
            n: xs[0],
            ci,
            h: xs[2],
            w: xs[3],
            co,
            k,
            ho: self.output_size(xs[2]),
            wo: self.output_size(xs[3]),
        })
    }

    fn chunk(g: &ConvGeometry) -> usize {
        (4096 / g.out_pixels().max(1)).clamp(1, g.n.max(1))
    }

    /// Output positions `lo..hi` whose tap at kernel offset `kk` lands inside
    /// an input axis of length `len`.
    fn valid_range(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let first = p - kk as isize;
        let lo = if first <= 0 { 0 } else { (first + s - 1) / s };
        let last = len as isize - 1 + p - kk as isize;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
        (lo as usize, (hi as usize).max(lo as usize))
    }

    /// Fill `cols[patch × (count·ho·wo)]` for samples `start..start+count`.
    fn im2col(&self, g: &ConvGeometry, x: &[f64], start: usize, count: usize, cols: &mut [f64]) {
        let ncols = count * g.out_pixels();
        let s = self.stride;
        for c in 0..g.ci {
            for ki in 0..g.k {
                let (ylo, yhi) = self.valid_range(ki, g.h, g.ho);
                for kj in 0..g.k {
                    let (xlo, xhi) = self.valid_range(kj, g.w, g.wo);
                    let row = (c * g.k + ki) * g.k + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for b in 0..count {
                        let plane = &x[((start + b) * g.ci + c) * g.h * g.w..][..g.h * g.w];
                        let block = &mut dst[b * g.out_pixels()..(b + 1) * g.out_pixels()];
                        block[..ylo * g.wo].fill(0.0);
                        block[yhi * g.wo..].fill(0.0);
                        for oy in ylo..yhi {
                            let iy = oy * s + ki - self.padding;
                            let out = &mut block[oy * g.wo..(oy + 1) * g.wo];
                            out[..xlo].fill(0.0);
                            out[xhi..].fill(0.0);
                            let base = iy * g.w + xlo * s + kj - self.padding;
                            if s == 1 {
                                out[xlo..xhi].copy_from_slice(&plane[base..base + (xhi - xlo)]);
                            } else {
                                for (t, o) in out[xlo..xhi].iter_mut().enumerate() {
                                    *o = plane[base + t * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, g: &ConvGeometry, cols: &[f64], start: usize, count: usize, dx: &mut [f64]) {
        let ncols = count * g.out_pixels();
        let s = self.stride;
        for c in 0..g.ci {
            for ki in 0..g.k {
                let (ylo, yhi) = self.valid_range(ki, g.h, g.ho);
                for kj in 0..g.k {
                    let (xlo, xhi) = self.valid_range(kj, g.w, g.wo);
                    let row = (c * g.k + ki) * g.k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for b in 0..count {
                        let plane = &mut dx[((start + b) * g.ci + c) * g.h * g.w..][..g.h * g.w];
                        for oy in ylo..yhi {
                            let iy = oy * s + ki - self.padding;
                            let inp = &src[b * g.out_pixels() + oy * g.wo..][..g.wo];
                            let base = iy * g.w + xlo * s + kj - self.padding;
                            for (t, v) in inp[xlo..xhi].iter().enumerate() {
                                plane[base + t * s] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(y)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let op = g.out_pixels();
        let mut out = vec![0.0; g.n * g.co * op];
        let chunk = Self::chunk(&g);
        let mut cols = vec![0.0; g.patch() * chunk * op];
        let mut prod = vec![0.0; g.co * chunk * op];
        let mut start = 0;
        while start < g.n {
            let count = chunk.min(g.n - start);
            let ncols = count * op;
            self.im2col(&g, x.data(), start, count, &mut cols[..g.patch() * ncols]);
            gemm(
                g.co,
                g.patch(),
                ncols,
                self.weight.value.data(),
                false,
                &cols[..g.patch() * ncols],
                false,
                0.0,
                &mut prod[..g.co * ncols],
            );
            for b in 0..count {
                for c in 0..g.co {
                    let bias = self.bias.value.data()[c];
                    let dst = &mut out[((start + b) * g.co + c) * op..][..op];
                    let src = &prod[c * ncols + b * op..][..op];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + bias;
                    }
                }
            }
            start += count;
        }
        Tensor::new(vec![g.n, g.co, g.ho, g.wo], out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv2d"))?;
        let g = self.geometry(&x)?;
        if dy.shape() != [g.n, g.co, g.ho, g.wo] {
            return Err(Error::InvalidArgument(format!(
                "conv2d upstream gradient has shape {:?}",
                dy.shape()
            )));
        }
        let op = g.out_pixels();
        let chunk = Self::chunk(&g);
        let mut dx = vec![0.0; x.len()];
        let mut cols = vec![0.0; g.patch() * chunk * op];
        let mut dcols = vec![0.0; g.patch() * chunk * op];
        let mut dprod = vec![0.0; g.co * chunk * op];
        let mut start = 0;
        while start < g.n {
            let count = chunk.min(g.n - start);
            let ncols = count * op;
            for b in 0..count {
                for c in 0..g.co {
                    let src = &dy.data()[((start + b) * g.co + c) * op..][..op];
                    dprod[c * ncols + b * op..][..op].copy_from_slice(src);
                    self.bias.grad.data_mut()[c] += src.iter().sum::<f64>();
                }
            }
            let dprod = &dprod[..g.co * ncols];
            self.im2col(&g, x.data(), start, count, &mut cols[..g.patch() * ncols]);
            gemm(
                g.co,
                ncols,
                g.patch(),
                dprod,
                false,
                &cols[..g.patch() * ncols],
                true,
                1.0,
                self.weight.grad.data_mut(),
            );
            gemm(
                g.patch(),
                g.co,
                ncols,
                self.weight.value.data(),
                true,
                dprod,
                false,
                0.0,
                &mut dcols[..g.patch() * ncols],
            );
            self.col2im(&g, &dcols[..g.patch() * ncols], start, count, &mut dx);
            start += count;
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Batch normalisation over the batch (and spatial positions for rank-4
/// inputs). Running statistics follow `r ← momentum·r + (1 − momentum)·batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug, PartialEq)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[features], 1.0)),
            beta: Param::new(Tensor::zeros(&[features])),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// `(N, C, S)` view of the input.
    fn view(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() != 2 && s.len() != 4 {
            return Err(Error::InvalidArgument(format!("batch norm expects rank 2 or 4, got {s:?}")));
        }
        if s[1] != self.features() {
            return Err(Error::Dimension {
                context: "batch norm features",
                expected: self.features(),
                got: s[1],
            });
        }
        Ok((s[0], s[1], s[2..].iter().product()))
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let (n, c, sp) = self.view(x)?;
        if n < 2 {
            return Err(Error::InvalidArgument(
                "batch norm in training mode needs a batch of at least 2".into(),
            ));
        }
        let count = (n * sp) as f64;
        let mut x_hat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let idx = |b: usize| (b * c + ch) * sp;
            let mut mean = 0.0;
            for b in 0..n {
                mean += x.data()[idx(b)..idx(b) + sp].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for b in 0..n {
                var += x.data()[idx(b)..idx(b) + sp].iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            var /= count;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (gm, bt) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for b in 0..n {
                for i in idx(b)..idx(b) + sp {
                    let h = (x.data()[i] - mean) * is;
                    x_hat[i] = h;
                    out[i] = gm * h + bt;
                }
            }
            let unbiased = var * count / (count - 1.0);
            self.running_mean[ch] = self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mean;
            self.running_var[ch] = self.momentum * self.running_var[ch] + (1.0 - self.momentum) * unbiased;
        }
        self.cache = Some(BnCache {
            x_hat: Tensor::new(x.shape().to_vec(), x_hat)?,
            inv_std,
        });
        Tensor::new(x.shape().to_vec(), out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, sp) = self.view(x)?;
        let mut out = x.clone();
        for ch in 0..c {
            let is = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let (gm, bt, mu) = (self.gamma.value.data()[ch], self.beta.value.data()[ch], self.running_mean[ch]);
            for b in 0..n {
                let start = (b * c + ch) * sp;
                for v in &mut out.data_mut()[start..start + sp] {
                    *v = gm * (*v - mu) * is + bt;
                }
            }
        }
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batch norm"))?;
        dy.check_same_shape(&cache.x_hat)?;
        let (n, c, sp) = self.view(dy)?;
        let count = (n * sp) as f64;
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..c {
            let idx = |b: usize| (b * c + ch) * sp;
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for b in 0..n {
                for i in idx(b)..idx(b) + sp {
                    sum_dy += dy.data()[i];
                    sum_dy_xhat += dy.data()[i] * cache.x_hat.data()[i];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let scale = self.gamma.value.data()[ch] * cache.inv_std[ch] / count;
            for b in 0..n {
                for i in idx(b)..idx(b) + sp {
                    dx[i] = scale * (count * dy.data()[i] - sum_dy - cache.x_hat.data()[i] * sum_dy_xhat);
                }
            }
        }
        Tensor::new(dy.shape().to_vec(), dx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Activation { kind: Activation, output: Option<Tensor> },
    /// Nearest-neighbour 2× upsampling of `[N, C, H, W]`.
    Upsample2x,
    /// Reshape every batch entry to `shape`; backward restores the input shape.
    Reshape { shape: Vec<usize>, input_shape: Option<Vec<usize>> },
}

impl Layer {
    pub fn dense(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Layer::Dense(Dense::new(inputs, outputs, rng))
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, rng: &mut impl Rng) -> Self {
        Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel, stride, padding, rng))
    }

    pub fn batch_norm(features: usize) -> Self {
        Layer::BatchNorm(BatchNorm::new(features))
    }

    pub fn relu() -> Self {
        Layer::Activation { kind: Activation::Relu, output: None }
    }

    pub fn tanh() -> Self {
        Layer::Activation { kind: Activation::Tanh, output: None }
    }

    pub fn sigmoid() -> Self {
        Layer::Activation { kind: Activation::Sigmoid, output: None }
    }

    pub fn reshape(shape: &[usize]) -> Self {
        Layer::Reshape { shape: shape.to_vec(), input_shape: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Activation { kind: Activation::Relu, .. } => "relu",
            Layer::Activation { kind: Activation::Tanh, .. } => "tanh",
            Layer::Activation { kind: Activation::Sigmoid, .. } => "sigmoid",
            Layer::Upsample2x => "upsample",
            Layer::Reshape { .. } => "reshape",
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(x, mode),
            Layer::Conv2d(c) => c.forward(x, mode),
            Layer::BatchNorm(b) => b.forward(x, mode),
            Layer::Activation { kind, output } => {
                let y = x.map(|v| kind.apply(v));
                if mode == Mode::Train {
                    *output = Some(y.clone());
                }
                Ok(y)
            }
            Layer::Upsample2x => upsample(x),
            Layer::Reshape { shape, input_shape } => {
                let mut target = vec![x.batch()];
                target.extend_from_slice(shape);
                if mode == Mode::Train {
                    *input_shape = Some(x.shape().to_vec());
                }
                x.clone().reshape(&target)
            }
        }
    }

    /// Forward pass without touching caches or running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.infer(x),
            Layer::Conv2d(c) => c.infer(x),
            Layer::BatchNorm(b) => b.infer(x),
            Layer::Activation { kind, .. } => Ok(x.map(|v| kind.apply(v))),
            Layer::Upsample2x => upsample(x),
            Layer::Reshape { shape, .. } => {
                let mut target = vec![x.batch()];
                target.extend_from_slice(shape);
                x.clone().reshape(&target)
            }
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.backward(dy),
            Layer::Conv2d(c) => c.backward(dy),
            Layer::BatchNorm(b) => b.backward(dy),
            Layer::Activation { kind, output } => {
                let y = output.take().ok_or_else(|| missing_cache("activation"))?;
                dy.check_same_shape(&y)?;
                let data = dy.data().iter().zip(y.data()).map(|(g, &o)| g * kind.derivative(o)).collect();
                Tensor::new(dy.shape().to_vec(), data)
            }
            Layer::Upsample2x => upsample_backward(dy),
            Layer::Reshape { input_shape, .. } => {
                let shape = input_shape.take().ok_or_else(|| missing_cache("reshape"))?;
                dy.clone().reshape(&shape)
            }
        }
    }

    /// Named trainable parameters of this layer.
    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::BatchNorm(b) => vec![("gamma", &b.gamma), ("beta", &b.beta)],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match self {
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            Layer::Conv2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::BatchNorm(b) => vec![("gamma", &mut b.gamma), ("beta", &mut b.beta)],
            _ => vec![],
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.input = None,
            Layer::Conv2d(c) => c.input = None,
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Activation { output, .. } => *output = None,
            Layer::Upsample2x => {}
            Layer::Reshape { input_shape, .. } => *input_shape = None,
        }
    }
}

fn upsample(x: &Tensor) -> Result<Tensor> {
    expect_rank("upsample", x, 4)?;
    let s = x.shape();
    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = vec![0.0; nc * 4 * h * w];
    for p in 0..nc {
        let src = &x.data()[p * h * w..][..h * w];
        let dst = &mut out[p * 4 * h * w..][..4 * h * w];
        for r in 0..2 * h {
            for c in 0..2 * w {
                dst[r * 2 * w + c] = src[(r / 2) * w + c / 2];
            }
        }
    }
    Tensor::new(vec![s[0], s[1], 2 * h, 2 * w], out)
}

fn upsample_backward(dy: &Tensor) -> Result<Tensor> {
    expect_rank("upsample backward", dy, 4)?;
    let s = dy.shape();
    if s[2] % 2 != 0 || s[3] % 2 != 0 {
        return Err(Error::InvalidArgument("upsample gradient must have even spatial size".into()));
    }
    let (nc, h, w) = (s[0] * s[1], s[2] / 2, s[3] / 2);
    let mut dx = vec![0.0; nc * h * w];
    for p in 0..nc {
        let src = &dy.data()[p * 4 * h * w..][..4 * h * w];
        let dst = &mut dx[p * h * w..][..h * w];
        for r in 0..2 * h {
            for c in 0..2 * w {
                dst[(r / 2) * w + c / 2] += src[r * 2 * w + c];
            }
        }
    }
    Tensor::new(vec![s[0], s[1], h, w], dx)
}
