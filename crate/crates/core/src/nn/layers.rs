use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{gemm, sigmoid, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

/// Unfolds one CHW image into a `(c·k·k) × (oh·ow)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, oh: usize, ow: usize) -> Vec<f64> {
    let cols_n = oh * ow;
    let mut cols = vec![0.0; c * k * k * cols_n];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back into (accumulating) `out`.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, oh: usize, ow: usize, out: &mut [f64]) {
    let cols_n = oh * ow;
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution; weight layout `[out_c][in_c][k][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: vec![0.0; out_c * in_c * k * k],
            bias: vec![0.0; out_c],
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_out(h, self.k, self.stride, self.pad)?,
            conv_out(w, self.k, self.stride, self.pad)?,
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w).expect("conv input smaller than kernel");
        let mut y = Tensor::zeros(x.n, self.out_c, oh, ow);
        let kk = self.in_c * self.k * self.k;
        for i in 0..x.n {
            let cols = im2col(x.sample(i), x.c, x.h, x.w, self.k, self.stride, self.pad, oh, ow);
            let out = y.sample_mut(i);
            for (o, b) in self.bias.iter().enumerate() {
                out[o * oh * ow..(o + 1) * oh * ow].fill(*b);
            }
            gemm(self.out_c, kk, oh * ow, &self.weight, false, &cols, false, 1.0, out);
        }
        y
    }

    /// Returns the input gradient and accumulates weight/bias gradients.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, dw: &mut [f64], db: &mut [f64]) -> Tensor {
        let (oh, ow) = (dy.h, dy.w);
        let kk = self.in_c * self.k * self.k;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut dcols = vec![0.0; kk * oh * ow];
        for i in 0..x.n {
            let cols = im2col(x.sample(i), x.c, x.h, x.w, self.k, self.stride, self.pad, oh, ow);
            let g = dy.sample(i);
            gemm(self.out_c, oh * ow, kk, g, false, &cols, true, 1.0, dw);
            for (o, b) in db.iter_mut().enumerate() {
                *b += g[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
            }
            gemm(kk, self.out_c, oh * ow, &self.weight, true, g, false, 0.0, &mut dcols);
            col2im(&dcols, x.c, x.h, x.w, self.k, self.stride, self.pad, oh, ow, dx.sample_mut(i));
        }
        dx
    }
}

/// Fractionally-strided convolution; weight layout `[in_c][out_c][k][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvTranspose2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: vec![0.0; in_c * out_c * k * k],
            bias: vec![0.0; out_c],
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let f = |n: usize| ((n.checked_sub(1)?) * self.stride + self.k).checked_sub(2 * self.pad);
        Some((f(h)?, f(w)?))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_c, "deconv input channels");
        let (oh, ow) = self.out_size(x.h, x.w).expect("deconv output size");
        let mut y = Tensor::zeros(x.n, self.out_c, oh, ow);
        let kk = self.out_c * self.k * self.k;
        let mut cols = vec![0.0; kk * x.h * x.w];
        for i in 0..x.n {
            gemm(kk, self.in_c, x.h * x.w, &self.weight, true, x.sample(i), false, 0.0, &mut cols);
            let out = y.sample_mut(i);
            col2im(&cols, self.out_c, oh, ow, self.k, self.stride, self.pad, x.h, x.w, out);
            for (o, b) in self.bias.iter().enumerate() {
                out[o * oh * ow..(o + 1) * oh * ow].iter_mut().for_each(|v| *v += b);
            }
        }
        y
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, dw: &mut [f64], db: &mut [f64]) -> Tensor {
        let kk = self.out_c * self.k * self.k;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for i in 0..x.n {
            let g = dy.sample(i);
            let dcols = im2col(g, self.out_c, dy.h, dy.w, self.k, self.stride, self.pad, x.h, x.w);
            for (o, b) in db.iter_mut().enumerate() {
                *b += g[o * dy.h * dy.w..(o + 1) * dy.h * dy.w].iter().sum::<f64>();
            }
            gemm(self.in_c, x.h * x.w, kk, x.sample(i), false, &dcols, true, 1.0, dw);
            gemm(self.in_c, kk, x.h * x.w, &self.weight, false, &dcols, false, 0.0, dx.sample_mut(i));
        }
        dx
    }
}

/// Per-channel batch normalisation with running statistics for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub c: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Biased per-channel mean and variance over batch and spatial positions.
    pub fn batch_stats(&self, x: &Tensor) -> BatchStats {
        let plane = x.h * x.w;
        let m = (x.n * plane) as f64;
        let mut mean = vec![0.0; self.c];
        let mut var = vec![0.0; self.c];
        for ch in 0..self.c {
            let vals = (0..x.n).flat_map(|i| {
                let off = (i * x.c + ch) * plane;
                x.data[off..off + plane].iter().copied()
            });
            let mu = vals.clone().sum::<f64>() / m;
            mean[ch] = mu;
            var[ch] = vals.map(|v| (v - mu).powi(2)).sum::<f64>() / m;
        }
        BatchStats {
            mean,
            var,
            count: x.n * plane,
        }
    }

    fn apply(&self, x: &Tensor, mean: &[f64], var: &[f64]) -> Tensor {
        let plane = x.h * x.w;
        let mut y = x.clone();
        for i in 0..x.n {
            for ch in 0..self.c {
                let scale = self.gamma[ch] / (var[ch] + self.eps).sqrt();
                let shift = self.beta[ch] - mean[ch] * scale;
                let off = (i * x.c + ch) * plane;
                y.data[off..off + plane].iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        self.apply(x, &self.running_mean, &self.running_var)
    }

    pub fn forward_train(&self, x: &Tensor) -> (Tensor, BatchStats) {
        let stats = self.batch_stats(x);
        (self.apply(x, &stats.mean, &stats.var), stats)
    }

    /// Training-mode backward pass; accumulates gamma/beta gradients.
    pub fn backward(&self, x: &Tensor, stats: &BatchStats, dy: &Tensor, dgamma: &mut [f64], dbeta: &mut [f64]) -> Tensor {
        let plane = x.h * x.w;
        let m = stats.count as f64;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for ch in 0..self.c {
            let inv = 1.0 / (stats.var[ch] + self.eps).sqrt();
            let mu = stats.mean[ch];
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in 0..x.n {
                let off = (i * x.c + ch) * plane;
                for j in off..off + plane {
                    sum_dy += dy.data[j];
                    sum_dy_xhat += dy.data[j] * (x.data[j] - mu) * inv;
                }
            }
            dbeta[ch] += sum_dy;
            dgamma[ch] += sum_dy_xhat;
            let k = self.gamma[ch] * inv / m;
            for i in 0..x.n {
                let off = (i * x.c + ch) * plane;
                for j in off..off + plane {
                    let xhat = (x.data[j] - mu) * inv;
                    dx.data[j] = k * (m * dy.data[j] - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
        dx
    }

    /// Exponential moving average update; the variance is stored unbiased.
    pub fn absorb(&mut self, stats: &BatchStats) {
        let m = stats.count as f64;
        let correction = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..self.c {
            self.running_mean[ch] =
                (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * stats.mean[ch];
            self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch]
                + self.momentum * stats.var[ch] * correction;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
    BatchNorm(BatchNorm2d),
    LeakyRelu(f64),
    Relu,
    Sigmoid,
}

impl Layer {
    /// Inference-mode forward pass (batch norm uses running statistics).
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Deconv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::LeakyRelu(a) => map(x, |v| if v > 0.0 { v } else { a * v }),
            Layer::Relu => map(x, |v| v.max(0.0)),
            Layer::Sigmoid => map(x, sigmoid),
        }
    }

    /// Output spatial size and channels for an input of the given shape.
    pub fn out_shape(&self, c: usize, h: usize, w: usize) -> Option<(usize, usize, usize)> {
        match self {
            Layer::Conv(l) if l.in_c == c => l.out_size(h, w).map(|(oh, ow)| (l.out_c, oh, ow)),
            Layer::Deconv(l) if l.in_c == c => l.out_size(h, w).map(|(oh, ow)| (l.out_c, oh, ow)),
            Layer::BatchNorm(l) if l.c == c => Some((c, h, w)),
            Layer::Conv(_) | Layer::Deconv(_) | Layer::BatchNorm(_) => None,
            _ => Some((c, h, w)),
        }
    }

    fn n_params(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Deconv(_) | Layer::BatchNorm(_) => 2,
            _ => 0,
        }
    }

    fn params(&self) -> Option<(&Vec<f64>, &Vec<f64>)> {
        match self {
            Layer::Conv(c) => Some((&c.weight, &c.bias)),
            Layer::Deconv(c) => Some((&c.weight, &c.bias)),
            Layer::BatchNorm(b) => Some((&b.gamma, &b.beta)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Deconv(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::BatchNorm(b) => Some((&mut b.gamma, &mut b.beta)),
            _ => None,
        }
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| f(v)).collect(),
        ..*x
    }
}

/// Training-mode activations kept for the backward pass: `acts[i]` is the input
/// of layer `i` and the final entry is the network output. `stats[i]` holds the
/// batch statistics of layer `i` when it is a batch norm.
#[derive(Clone, Debug)]
pub struct Trace {
    pub acts: Vec<Tensor>,
    pub stats: Vec<Option<BatchStats>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_prefix(x, self.layers.len())
    }

    /// Inference-mode forward pass through the first `upto` layers only.
    pub fn forward_prefix(&self, x: &Tensor, upto: usize) -> Tensor {
        let mut cur = x.clone();
        for l in &self.layers[..upto] {
            cur = l.forward(&cur);
        }
        cur
    }

    /// Training-mode forward pass (batch norm uses batch statistics).
    pub fn forward_trace(&self, x: &Tensor) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut stats = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for l in &self.layers {
            let cur = acts.last().expect("non-empty");
            let (next, st) = match l {
                Layer::BatchNorm(b) => {
                    let (y, s) = b.forward_train(cur);
                    (y, Some(s))
                }
                _ => (l.forward(cur), None),
            };
            acts.push(next);
            stats.push(st);
        }
        Trace { acts, stats }
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn absorb_stats(&mut self, trace: &Trace) {
        for (l, st) in self.layers.iter_mut().zip(&trace.stats) {
            if let (Layer::BatchNorm(b), Some(s)) = (l, st) {
                b.absorb(s);
            }
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    /// Backpropagates `dy` through the traced pass; parameter gradients are
    /// accumulated into `grads` (ordered like [`Sequential::params`]).
    pub fn backward(&self, trace: &Trace, dy: Tensor, grads: &mut [Vec<f64>]) -> Tensor {
        let mut g = dy;
        let mut slot = self.n_param_tensors();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            slot -= layer.n_params();
            g = match layer {
                Layer::Conv(l) => {
                    let (dw, db) = split_two(&mut grads[slot..slot + 2]);
                    l.backward(x, &g, dw, db)
                }
                Layer::Deconv(l) => {
                    let (dw, db) = split_two(&mut grads[slot..slot + 2]);
                    l.backward(x, &g, dw, db)
                }
                Layer::BatchNorm(l) => {
                    let (dw, db) = split_two(&mut grads[slot..slot + 2]);
                    let st = trace.stats[i].as_ref().expect("training trace");
                    l.backward(x, st, &g, dw, db)
                }
                Layer::LeakyRelu(a) => zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { a * gv }),
                Layer::Relu => zip_map(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                Layer::Sigmoid => zip_map(&g, y, |gv, yv| gv * yv * (1.0 - yv)),
            };
        }
        g
    }

    pub fn n_param_tensors(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable tensors in layer order: weight then bias (gamma then beta for batch norm).
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Parameter names of the form `<layer index>.weight` / `<layer index>.bias`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.n_params() == 2 {
                out.push(format!("{i}.weight"));
                out.push(format!("{i}.bias"));
            }
        }
        out
    }

    /// Every persistent tensor (parameters plus batch-norm running statistics) by name.
    pub fn state(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = self.param_names().into_iter().zip(self.params()).collect();
        for (i, l) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(b) = l {
                out.push((format!("{i}.running_mean"), &b.running_mean));
                out.push((format!("{i}.running_var"), &b.running_var));
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(b) = l {
                params.push((format!("{i}.weight"), &mut b.gamma));
                params.push((format!("{i}.bias"), &mut b.beta));
                buffers.push((format!("{i}.running_mean"), &mut b.running_mean));
                buffers.push((format!("{i}.running_var"), &mut b.running_var));
            } else if let Some((w, b)) = l.params_mut() {
                params.push((format!("{i}.weight"), w));
                params.push((format!("{i}.bias"), b));
            }
        }
        params.extend(buffers);
        params
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Gaussian (de)convolution weights and zero biases; batch norm is reset to identity.
    pub fn init_normal(&mut self, std: f64, rng: &mut impl Rng) {
        let normal = Normal::new(0.0, std).expect("valid std");
        for l in &mut self.layers {
            match l {
                Layer::Conv(Conv2d { weight, bias, .. })
                | Layer::Deconv(ConvTranspose2d { weight, bias, .. }) => {
                    weight.iter_mut().for_each(|v| *v = normal.sample(rng));
                    bias.fill(0.0);
                }
                Layer::BatchNorm(b) => *b = BatchNorm2d::new(b.c),
                _ => {}
            }
        }
    }

    /// Shapes `(c, h, w)` after each layer for a given input, or `None` if incompatible.
    pub fn shapes(&self, c: usize, h: usize, w: usize) -> Option<Vec<(usize, usize, usize)>> {
        let mut cur = (c, h, w);
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            cur = l.out_shape(cur.0, cur.1, cur.2)?;
            out.push(cur);
        }
        Some(out)
    }
}

fn split_two(s: &mut [Vec<f64>]) -> (&mut [f64], &mut [f64]) {
    let (a, b) = s.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert!(g.same_shape(other));
    Tensor {
        data: g.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ..*g
    }
}
