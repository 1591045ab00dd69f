use std::ops::Range;

use rand::Rng;

use super::param::{join, Module, Param};
use super::real::{gemm, gemm_strided, Op, Real};
use super::tensor::Tensor;

/// Spatiotemporal extent `[t, h, w]`.
pub type Dims3 = [usize; 3];

/// Output extent of a strided, padded window along one axis.
pub fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad).checked_sub(kernel).map_or(0, |v| v / stride + 1)
}

/// Outputs `o < out_len` whose input index `o * stride + k - pad` lies in `[0, len)`.
fn valid_outputs(out_len: usize, stride: usize, k: usize, pad: usize, len: usize) -> Range<usize> {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out_len) } else { 0 };
    lo..hi.max(lo)
}

/// 3-D convolution without bias over `[N, C, T, H, W]`.
///
/// Each input frame is unfolded spatially once (`C*kh*kw` rows by
/// `T*ho*wo` columns); every temporal tap `kt` is then a GEMM of the
/// `kt`-th weight slice against a shifted block of those columns. This keeps
/// the unfolded buffer `kt` times smaller than a full 3-D im2col.
#[derive(Debug, Clone)]
pub struct Conv3d<R> {
    pub weight: Param<R>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Dims3,
    pub stride: Dims3,
    pub padding: Dims3,
    /// When false the backward pass skips the input gradient.
    pub needs_input_grad: bool,
    input: Option<Tensor<R>>,
    col: Vec<R>,
}

impl<R: Real> Conv3d<R> {
    /// He-uniform initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn new<G: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: Dims3, stride: Dims3, padding: Dims3, rng: &mut G) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let shape = [out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        Self {
            weight: Param::uniform(&shape, (6.0 / fan_in as f64).sqrt(), rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            needs_input_grad: true,
            input: None,
            col: Vec::new(),
        }
    }

    pub fn output_dims(&self, input: Dims3) -> Dims3 {
        std::array::from_fn(|a| conv_out(input[a], self.kernel[a], self.stride[a], self.padding[a]))
    }

    /// Rows of the spatially unfolded input: `C * kh * kw`.
    fn spatial_rows(&self) -> usize {
        self.in_channels * self.kernel[1] * self.kernel[2]
    }

    /// Weight slices per temporal tap, each `[O, C*kh*kw]` row-major.
    fn tap_weights(&self) -> Vec<R> {
        let (o, c, [kt, kh, kw]) = (self.out_channels, self.in_channels, self.kernel);
        let rows = self.spatial_rows();
        let mut taps = vec![R::ZERO; kt * o * rows];
        for oc in 0..o {
            for ch in 0..c {
                for t in 0..kt {
                    let src = (((oc * c + ch) * kt + t) * kh) * kw;
                    let dst = (t * o + oc) * rows + ch * kh * kw;
                    taps[dst..dst + kh * kw].copy_from_slice(&self.weight.value[src..src + kh * kw]);
                }
            }
        }
        taps
    }

    /// Unfolds one sample `[C, T, H, W]` into `[C*kh*kw, T*ho*wo]`.
    fn unfold(&self, x: &[R], dims: Dims3, out: Dims3, col: &mut [R]) {
        let [t, h, w] = dims;
        let [_, ho, wo] = out;
        let [_, sh, sw] = self.stride;
        let [_, ph, pw] = self.padding;
        let cols = t * ho * wo;
        col.fill(R::ZERO);
        let mut row = 0;
        for c in 0..self.in_channels {
            for kh in 0..self.kernel[1] {
                let valid_h = valid_outputs(ho, sh, kh, ph, h);
                for kw in 0..self.kernel[2] {
                    let valid_w = valid_outputs(wo, sw, kw, pw, w);
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for it in 0..t {
                        for oh in valid_h.clone() {
                            let src = ((c * t + it) * h + oh * sh + kh - ph) * w + kw;
                            let d = &mut dst[(it * ho + oh) * wo..(it * ho + oh + 1) * wo];
                            for ow in valid_w.clone() {
                                d[ow] = x[src + ow * sw - pw];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`Conv3d::unfold`], accumulating into `dx`.
    fn fold(&self, col: &[R], dims: Dims3, out: Dims3, dx: &mut [R]) {
        let [t, h, w] = dims;
        let [_, ho, wo] = out;
        let [_, sh, sw] = self.stride;
        let [_, ph, pw] = self.padding;
        let cols = t * ho * wo;
        let mut row = 0;
        for c in 0..self.in_channels {
            for kh in 0..self.kernel[1] {
                let valid_h = valid_outputs(ho, sh, kh, ph, h);
                for kw in 0..self.kernel[2] {
                    let valid_w = valid_outputs(wo, sw, kw, pw, w);
                    let src = &col[row * cols..(row + 1) * cols];
                    for it in 0..t {
                        for oh in valid_h.clone() {
                            let dst = ((c * t + it) * h + oh * sh + kh - ph) * w + kw;
                            let s = &src[(it * ho + oh) * wo..(it * ho + oh + 1) * wo];
                            for ow in valid_w.clone() {
                                dx[dst + ow * sw - pw] += s[ow];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// `(output frames, input frame of the first)` blocks for tap `kt`: one
    /// contiguous block when the temporal stride is 1, else one per frame.
    fn tap_blocks(&self, kt: usize, t: usize, to: usize) -> Vec<(Range<usize>, usize)> {
        let (st, pt) = (self.stride[0], self.padding[0]);
        let valid = valid_outputs(to, st, kt, pt, t);
        if st == 1 {
            if valid.is_empty() {
                Vec::new()
            } else {
                vec![(valid.clone(), valid.start + kt - pt)]
            }
        } else {
            valid.map(|ot| (ot..ot + 1, ot * st + kt - pt)).collect()
        }
    }

    pub fn forward(&mut self, x: &Tensor<R>, record: bool) -> Tensor<R> {
        let (n, c) = (x.dim(0), x.dim(1));
        assert_eq!(c, self.in_channels, "conv input channels");
        let dims = [x.dim(2), x.dim(3), x.dim(4)];
        let out = self.output_dims(dims);
        let plane = out[1] * out[2];
        let (o, rows, p) = (self.out_channels, self.spatial_rows(), out[0] * plane);
        let cols = dims[0] * plane;
        let in_len = c * dims.iter().product::<usize>();
        let taps = self.tap_weights();
        let blocks: Vec<_> = (0..self.kernel[0]).map(|kt| self.tap_blocks(kt, dims[0], out[0])).collect();
        let mut y = Tensor::zeros(&[n, o, out[0], out[1], out[2]]);
        let mut col = std::mem::take(&mut self.col);
        col.resize(rows * cols, R::ZERO);
        for s in 0..n {
            self.unfold(&x.data()[s * in_len..(s + 1) * in_len], dims, out, &mut col);
            let ys = &mut y.data_mut()[s * o * p..(s + 1) * o * p];
            for (kt, tap_blocks) in blocks.iter().enumerate() {
                let w = &taps[kt * o * rows..(kt + 1) * o * rows];
                for (frames, first_in) in tap_blocks {
                    let n_cols = frames.len() * plane;
                    gemm_strided(o, rows, n_cols, w, (rows, 1), &col[first_in * plane..], (cols, 1), R::ONE, &mut ys[frames.start * plane..], p);
                }
            }
        }
        self.col = col;
        self.input = record.then(|| x.clone());
        y
    }

    /// Accumulates the weight gradient; returns the input gradient (empty
    /// when `needs_input_grad` is false).
    pub fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let x = self.input.take().expect("conv backward without a training forward");
        let n = x.dim(0);
        let dims = [x.dim(2), x.dim(3), x.dim(4)];
        let out = self.output_dims(dims);
        let plane = out[1] * out[2];
        let (o, rows, p) = (self.out_channels, self.spatial_rows(), out[0] * plane);
        let cols = dims[0] * plane;
        let in_len = self.in_channels * dims.iter().product::<usize>();
        let kt_n = self.kernel[0];
        let taps = self.tap_weights();
        let blocks: Vec<_> = (0..kt_n).map(|kt| self.tap_blocks(kt, dims[0], out[0])).collect();
        let mut dtaps = vec![R::ZERO; kt_n * o * rows];
        let mut dx = if self.needs_input_grad { Tensor::zeros(x.shape()) } else { Tensor::zeros(&[0]) };
        let mut col = std::mem::take(&mut self.col);
        col.resize(rows * cols, R::ZERO);
        let mut dcol = if self.needs_input_grad { vec![R::ZERO; rows * cols] } else { Vec::new() };
        for s in 0..n {
            self.unfold(&x.data()[s * in_len..(s + 1) * in_len], dims, out, &mut col);
            let dys = &dy.data()[s * o * p..(s + 1) * o * p];
            dcol.fill(R::ZERO);
            for (kt, tap_blocks) in blocks.iter().enumerate() {
                let w = &taps[kt * o * rows..(kt + 1) * o * rows];
                let dw = &mut dtaps[kt * o * rows..(kt + 1) * o * rows];
                for (frames, first_in) in tap_blocks {
                    let n_cols = frames.len() * plane;
                    let d = &dys[frames.start * plane..];
                    // dW_kt += dy_block (o x n_cols) * col_block^T (n_cols x rows)
                    gemm_strided(o, n_cols, rows, d, (p, 1), &col[first_in * plane..], (1, cols), R::ONE, dw, rows);
                    if self.needs_input_grad {
                        // dcol_block += W_kt^T (rows x o) * dy_block (o x n_cols)
                        gemm_strided(rows, o, n_cols, w, (1, rows), d, (p, 1), R::ONE, &mut dcol[first_in * plane..], cols);
                    }
                }
            }
            if self.needs_input_grad {
                self.fold(&dcol, dims, out, &mut dx.data_mut()[s * in_len..(s + 1) * in_len]);
            }
        }
        self.col = col;
        let (c, [_, kh, kw]) = (self.in_channels, self.kernel);
        for oc in 0..o {
            for ch in 0..c {
                for t in 0..kt_n {
                    let dst = (((oc * c + ch) * kt_n + t) * kh) * kw;
                    let src = (t * o + oc) * rows + ch * kh * kw;
                    for i in 0..kh * kw {
                        self.weight.grad[dst + i] += dtaps[src + i];
                    }
                }
            }
        }
        dx
    }
}

impl<R: Real> Module<R> for Conv3d<R> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

/// Batch normalisation over `[N, C, ...]`, per channel.
///
/// Training mode normalises with batch statistics and updates running
/// estimates (momentum 0.1, unbiased variance); inference mode uses the
/// running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm<R> {
    pub gamma: Param<R>,
    pub beta: Param<R>,
    pub running_mean: Param<R>,
    pub running_var: Param<R>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<R>>,
}

#[derive(Debug, Clone)]
struct BnCache<R> {
    x_hat: Vec<R>,
    inv_std: Vec<R>,
    shape: Vec<usize>,
    train: bool,
}

impl<R: Real> BatchNorm<R> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], R::ONE),
            beta: Param::filled(&[channels], R::ZERO),
            running_mean: Param::buffer(&[channels], R::ZERO),
            running_var: Param::buffer(&[channels], R::ONE),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn layout(x: &Tensor<R>) -> (usize, usize, usize) {
        let (n, c) = (x.dim(0), x.dim(1));
        (n, c, x.len() / (n * c).max(1))
    }

    /// `record` keeps what the backward pass needs.
    pub fn forward(&mut self, x: &Tensor<R>, train: bool, record: bool) -> Tensor<R> {
        let (n, c, s) = Self::layout(x);
        assert_eq!(c, self.gamma.len(), "batch-norm channels");
        let m = n * s;
        let mut y = Tensor::zeros(x.shape());
        let mut x_hat = vec![R::ZERO; if record { x.len() } else { 0 }];
        let mut inv_stds = vec![R::ZERO; c];
        for ch in 0..c {
            let (mean, inv_std) = if train {
                let mut sum = 0.0;
                for b in 0..n {
                    let off = (b * c + ch) * s;
                    sum += x.data()[off..off + s].iter().map(|v| v.to_f64()).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    let off = (b * c + ch) * s;
                    sq += x.data()[off..off + s].iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>();
                }
                let var = sq / m as f64;
                let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
                let rm = &mut self.running_mean.value[ch];
                *rm = R::from_f64((1.0 - self.momentum) * rm.to_f64() + self.momentum * mean);
                let rv = &mut self.running_var.value[ch];
                *rv = R::from_f64((1.0 - self.momentum) * rv.to_f64() + self.momentum * unbiased);
                (mean, 1.0 / (var + self.eps).sqrt())
            } else {
                let var = self.running_var.value[ch].to_f64();
                (self.running_mean.value[ch].to_f64(), 1.0 / (var + self.eps).sqrt())
            };
            inv_stds[ch] = R::from_f64(inv_std);
            let (mean, inv_std) = (R::from_f64(mean), R::from_f64(inv_std));
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    let xh = (x.data()[i] - mean) * inv_std;
                    if record {
                        x_hat[i] = xh;
                    }
                    y.data_mut()[i] = g * xh + bt;
                }
            }
        }
        self.cache = record.then(|| BnCache {
            x_hat,
            inv_std: inv_stds,
            shape: x.shape().to_vec(),
            train,
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let cache = self.cache.take().expect("batch-norm backward without a recorded forward");
        assert_eq!(dy.shape(), &cache.shape[..]);
        let (n, c, s) = Self::layout(dy);
        let m = (n * s) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    let d = dy.data()[i].to_f64();
                    sum_dy += d;
                    sum_dy_xh += d * cache.x_hat[i].to_f64();
                }
            }
            self.gamma.grad[ch] += R::from_f64(sum_dy_xh);
            self.beta.grad[ch] += R::from_f64(sum_dy);
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            let (mean_dy, mean_dy_xh) = if cache.train {
                (R::from_f64(sum_dy / m), R::from_f64(sum_dy_xh / m))
            } else {
                (R::ZERO, R::ZERO)
            };
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    dx.data_mut()[i] = scale * (dy.data()[i] - mean_dy - cache.x_hat[i] * mean_dy_xh);
                }
            }
        }
        dx
    }
}

impl<R: Real> Module<R> for BatchNorm<R> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Rectified linear unit that remembers its active set.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward<R: Real>(&mut self, mut x: Tensor<R>, record: bool) -> Tensor<R> {
        if record {
            self.mask = x.data().iter().map(|&v| v > R::ZERO).collect();
        }
        x.data_mut().iter_mut().for_each(|v| {
            if !(*v > R::ZERO) {
                *v = R::ZERO
            }
        });
        x
    }

    pub fn backward<R: Real>(&mut self, mut dy: Tensor<R>) -> Tensor<R> {
        assert_eq!(self.mask.len(), dy.len(), "relu backward without a recorded forward");
        for (d, &m) in dy.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *d = R::ZERO;
            }
        }
        dy
    }
}

/// Max pooling over `[N, C, T, H, W]` with a cubic window; padded cells are
/// ignored, so the padding must be smaller than the kernel.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    argmax: Vec<u32>,
    input_shape: Vec<usize>,
}

impl MaxPool3d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            argmax: Vec::new(),
            input_shape: Vec::new(),
        }
    }

    pub fn output_dims(&self, input: Dims3) -> Dims3 {
        input.map(|v| conv_out(v, self.kernel, self.stride, self.padding))
    }

    pub fn forward<R: Real>(&mut self, x: &Tensor<R>, record: bool) -> Tensor<R> {
        let (n, c) = (x.dim(0), x.dim(1));
        let dims = [x.dim(2), x.dim(3), x.dim(4)];
        let [t, h, w] = dims;
        let out = self.output_dims(dims);
        let [to, ho, wo] = out;
        let mut y = Tensor::zeros(&[n, c, to, ho, wo]);
        self.argmax.clear();
        if record {
            self.argmax.reserve(y.len());
        }
        let spans = |out: usize, len: usize| -> Vec<Range<usize>> {
            (0..out)
                .map(|o| {
                    let start = (o * self.stride) as isize - self.padding as isize;
                    start.max(0) as usize..((start + self.kernel as isize).min(len as isize)) as usize
                })
                .collect()
        };
        let (st, sh, sw) = (spans(to, t), spans(ho, h), spans(wo, w));
        let xd = x.data();
        let mut idx = 0;
        for plane in 0..n * c {
            let base = plane * t * h * w;
            for rt in &st {
                for rh in &sh {
                    for rw in &sw {
                        let mut best = base + (rt.start * h + rh.start) * w + rw.start;
                        let mut best_v = xd[best];
                        for it in rt.clone() {
                            for ih in rh.clone() {
                                let row = base + (it * h + ih) * w;
                                for i in row + rw.start..row + rw.end {
                                    if xd[i] > best_v {
                                        best_v = xd[i];
                                        best = i;
                                    }
                                }
                            }
                        }
                        y.data_mut()[idx] = best_v;
                        if record {
                            self.argmax.push(best as u32);
                        }
                        idx += 1;
                    }
                }
            }
        }
        if record {
            self.input_shape = x.shape().to_vec();
        }
        y
    }

    pub fn backward<R: Real>(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        assert_eq!(self.argmax.len(), dy.len(), "max-pool backward without a recorded forward");
        let mut dx = Tensor::zeros(&self.input_shape);
        for (&i, &d) in self.argmax.iter().zip(dy.data()) {
            dx.data_mut()[i as usize] += d;
        }
        dx
    }
}

/// Mean over all trailing axes: `[N, C, ...] -> [N, C]`.
pub fn global_avg_pool<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (n, c) = (x.dim(0), x.dim(1));
    let s = x.len() / (n * c).max(1);
    let scale = R::from_f64(1.0 / s as f64);
    let data = x.data().chunks(s.max(1)).map(|chunk| chunk.iter().copied().sum::<R>() * scale).collect();
    Tensor::from_vec(&[n, c], data).expect("pooled shape")
}

pub fn global_avg_pool_backward<R: Real>(dy: &Tensor<R>, input_shape: &[usize]) -> Tensor<R> {
    let s: usize = input_shape[2..].iter().product();
    let scale = R::from_f64(1.0 / s as f64);
    let data = dy.data().iter().flat_map(|&d| std::iter::repeat_n(d * scale, s)).collect();
    Tensor::from_vec(input_shape, data).expect("unpooled shape")
}

/// Affine layer `y = x W^T + b` on `[N, in]`.
#[derive(Debug, Clone)]
pub struct Linear<R> {
    pub weight: Param<R>,
    pub bias: Param<R>,
    input: Option<Tensor<R>>,
}

impl<R: Real> Linear<R> {
    /// Weights and bias `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new<G: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut G) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Param::uniform(&[outputs, inputs], bound, rng),
            bias: Param::uniform(&[outputs], bound, rng),
            input: None,
        }
    }

    /// Weights `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn zero_bias<G: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut G) -> Self {
        let mut layer = Self::new(inputs, outputs, rng);
        layer.bias.value.fill(R::ZERO);
        layer
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::filled(&[outputs, inputs], R::ZERO),
            bias: Param::filled(&[outputs], R::ZERO),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&mut self, x: &Tensor<R>, record: bool) -> Tensor<R> {
        let (n, i, o) = (x.dim(0), self.inputs(), self.outputs());
        assert_eq!(x.dim(1), i, "linear input width");
        let mut y = Tensor::zeros(&[n, o]);
        for r in 0..n {
            y.data_mut()[r * o..(r + 1) * o].copy_from_slice(&self.bias.value);
        }
        gemm(n, i, o, x.data(), Op::N, &self.weight.value, Op::T, R::ONE, y.data_mut());
        self.input = record.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let x = self.input.take().expect("linear backward without a recorded forward");
        let (n, i, o) = (x.dim(0), self.inputs(), self.outputs());
        gemm(o, n, i, dy.data(), Op::T, x.data(), Op::N, R::ONE, &mut self.weight.grad);
        for r in 0..n {
            for (g, &d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[n, i]);
        gemm(n, o, i, dy.data(), Op::N, &self.weight.value, Op::N, R::ZERO, dx.data_mut());
        dx
    }
}

impl<R: Real> Module<R> for Linear<R> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Checks `d/dx <w, f(x)>` against central differences at every coordinate.
    fn check_input_grad(x: &Tensor<f64>, w: &Tensor<f64>, analytic: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> Tensor<f64>) {
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let numeric = (dot(w, &f(&xp)) - dot(w, &f(&xm))) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!((a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()), "coord {i}: {a} vs {numeric}");
        }
    }

    fn naive_conv(x: &Tensor<f64>, weight: &Param<f64>, stride: Dims3, pad: Dims3) -> Tensor<f64> {
        let [o, c, kt, kh, kw] = weight.shape[..] else { unreachable!() };
        let (n, t, h, w) = (x.dim(0), x.dim(2), x.dim(3), x.dim(4));
        let out = [conv_out(t, kt, stride[0], pad[0]), conv_out(h, kh, stride[1], pad[1]), conv_out(w, kw, stride[2], pad[2])];
        let mut y = Tensor::zeros(&[n, o, out[0], out[1], out[2]]);
        let at = |b: usize, ch: usize, i: isize, j: isize, k: isize| -> f64 {
            if i < 0 || j < 0 || k < 0 || i >= t as isize || j >= h as isize || k >= w as isize {
                0.0
            } else {
                x.data()[(((b * c + ch) * t + i as usize) * h + j as usize) * w + k as usize]
            }
        };
        let mut idx = 0;
        for b in 0..n {
            for oc in 0..o {
                for ot in 0..out[0] {
                    for oh in 0..out[1] {
                        for ow in 0..out[2] {
                            let mut acc = 0.0;
                            for ch in 0..c {
                                for a in 0..kt {
                                    for bb in 0..kh {
                                        for cc in 0..kw {
                                            let wv = weight.value[(((oc * c + ch) * kt + a) * kh + bb) * kw + cc];
                                            acc += wv * at(
                                                b,
                                                ch,
                                                (ot * stride[0] + a) as isize - pad[0] as isize,
                                                (oh * stride[1] + bb) as isize - pad[1] as isize,
                                                (ow * stride[2] + cc) as isize - pad[2] as isize,
                                            );
                                        }
                                    }
                                }
                            }
                            y.data_mut()[idx] = acc;
                            idx += 1;
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (kernel, stride, pad) in [([3, 3, 3], [1, 1, 1], [1, 1, 1]), ([3, 5, 5], [1, 2, 2], [1, 2, 2]), ([1, 1, 1], [2, 2, 2], [0, 0, 0])] {
            let mut conv = Conv3d::<f64>::new(2, 3, kernel, stride, pad, &mut rng);
            let x = random(&[2, 2, 5, 6, 7], 2);
            let y = conv.forward(&x, false);
            let expect = naive_conv(&x, &conv.weight, stride, pad);
            assert_eq!(y.shape(), expect.shape());
            for (a, b) in y.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv3d::<f64>::new(2, 3, [3, 3, 3], [1, 2, 2], [1, 1, 1], &mut rng);
        let x = random(&[2, 2, 4, 5, 5], 4);
        let y = conv.forward(&x, true);
        let w = random(y.shape(), 5);
        let dx = conv.backward(&w);
        let probe = conv.clone();
        check_input_grad(&x, &w, &dx, |x| probe.clone().forward(x, false));

        // Weight gradient: the layer is linear in the weights.
        let weights = Tensor::from_vec(&[conv.weight.len()], conv.weight.value.clone()).unwrap();
        let wgrad = Tensor::from_vec(&[conv.weight.len()], conv.weight.grad.clone()).unwrap();
        check_input_grad(&weights, &w, &wgrad, |wv| {
            let mut c = probe.clone();
            c.weight.value = wv.data().to_vec();
            c.forward(&x, false)
        });
    }

    #[test]
    fn batch_norm_gradients_in_both_modes() {
        for train in [true, false] {
            let mut bn = BatchNorm::<f64>::new(3);
            bn.gamma.value = vec![0.5, 1.5, -1.0];
            bn.beta.value = vec![0.1, 0.0, -0.2];
            bn.running_mean.value = vec![0.2, -0.1, 0.0];
            bn.running_var.value = vec![0.5, 2.0, 1.0];
            let x = random(&[4, 3, 2, 2, 1], 6);
            let template = bn.clone();
            let y = bn.forward(&x, train, true);
            let w = random(y.shape(), 7);
            let dx = bn.backward(&w);
            check_input_grad(&x, &w, &dx, |x| template.clone().forward(x, train, false));
        }
    }

    #[test]
    fn batch_norm_train_output_is_standardised_and_updates_running_stats() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = random(&[5, 2, 3, 1, 1], 8);
        let y = bn.forward(&x, true, false);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..5).flat_map(|b| y.data()[(b * 2 + ch) * 3..(b * 2 + ch) * 3 + 3].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 15.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 15.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value.iter().all(|&m| m != 0.0));
        assert!(bn.running_var.value.iter().all(|&v| v != 1.0));
    }

    #[test]
    fn max_pool_picks_maxima_and_routes_gradients() {
        let mut pool = MaxPool3d::new(3, 2, 1);
        let x = random(&[1, 2, 5, 6, 6], 9);
        let y = pool.forward(&x, true);
        assert_eq!(y.shape(), &[1, 2, 3, 3, 3]);
        // Output (0,0,0,0,0) covers input indices [0,2) on every axis.
        let mut best = f64::MIN;
        for t in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    best = best.max(x.data()[(t * 6 + h) * 6 + w]);
                }
            }
        }
        assert_eq!(y.data()[0], best);
        let w = random(y.shape(), 10);
        let dx = pool.backward(&w);
        let probe = pool.clone();
        check_input_grad(&x, &w, &dx, |x| probe.clone().forward(x, false));
    }

    #[test]
    fn linear_and_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut fc = Linear::<f64>::new(4, 3, &mut rng);
        fc.bias.value = vec![0.3, -0.2, 0.1];
        let x = random(&[5, 4], 12);
        let y = fc.forward(&x, true);
        assert!((y.data()[0] - (0.3 + (0..4).map(|i| x.data()[i] * fc.weight.value[i]).sum::<f64>())).abs() < 1e-12);
        let w = random(y.shape(), 13);
        let dx = fc.backward(&w);
        let probe = fc.clone();
        check_input_grad(&x, &w, &dx, |x| probe.clone().forward(x, false));
        let bias_grad: Vec<f64> = (0..3).map(|j| (0..5).map(|r| w.data()[r * 3 + j]).sum()).collect();
        assert_eq!(fc.bias.grad, bias_grad);

        let x = random(&[2, 3, 2, 2, 2], 14);
        let y = global_avg_pool(&x);
        assert!((y.data()[0] - x.data()[..8].iter().sum::<f64>() / 8.0).abs() < 1e-12);
        let w = random(y.shape(), 15);
        let dx = global_avg_pool_backward(&w, x.shape());
        check_input_grad(&x, &w, &dx, global_avg_pool);
    }

    #[test]
    fn relu_masks_gradient() {
        let mut relu = Relu::default();
        let x = Tensor::from_vec(&[1, 4], vec![-1.0, 2.0, 0.0, 3.0]).unwrap();
        let y = relu.forward(x, true);
        assert_eq!(y.data(), &[0.0, 2.0, 0.0, 3.0]);
        let dx = relu.backward(Tensor::from_vec(&[1, 4], vec![1.0; 4]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 1.0]);
    }
}
