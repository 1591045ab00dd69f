use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, InputNorm, NetConfig};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, global_avg_pool_backward, join, BatchNorm, Conv3d, Linear, MaxPool3d, Module, Param, Real, Relu, Tensor};

/// Training mode uses batch statistics and records activations for the
/// backward pass; evaluation mode uses running statistics and records nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    fn train(self) -> bool {
        self == Mode::Train
    }
}

/// Output extent `[channels, frames, height, width]` after a named stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: &'static str,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone)]
struct BasicBlock<R> {
    conv1: Conv3d<R>,
    bn1: BatchNorm<R>,
    relu1: Relu,
    conv2: Conv3d<R>,
    bn2: BatchNorm<R>,
    shortcut: Option<(Conv3d<R>, BatchNorm<R>)>,
    relu_out: Relu,
}

impl<R: Real> BasicBlock<R> {
    fn new(inputs: usize, outputs: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = (stride != 1 || inputs != outputs).then(|| {
            (
                Conv3d::new(inputs, outputs, [1; 3], [stride; 3], [0; 3], rng),
                BatchNorm::new(outputs),
            )
        });
        Self {
            conv1: Conv3d::new(inputs, outputs, [3; 3], [stride; 3], [1; 3], rng),
            bn1: BatchNorm::new(outputs),
            relu1: Relu::default(),
            conv2: Conv3d::new(outputs, outputs, [3; 3], [1; 3], [1; 3], rng),
            bn2: BatchNorm::new(outputs),
            shortcut,
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Tensor<R>, mode: Mode) -> Tensor<R> {
        let (train, record) = (mode.train(), mode.train());
        let a = self.conv1.forward(x, record);
        let a = self.bn1.forward(&a, train, record);
        let a = self.relu1.forward(a, record);
        let b = self.conv2.forward(&a, record);
        let mut b = self.bn2.forward(&b, train, record);
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x, record);
                b.add_assign(&bn.forward(&s, train, record));
            }
            None => b.add_assign(x),
        }
        self.relu_out.forward(b, record)
    }

    fn backward(&mut self, dy: Tensor<R>) -> Tensor<R> {
        let d = self.relu_out.backward(dy);
        let db = self.bn2.backward(&d);
        let da = self.conv2.backward(&db);
        let da = self.relu1.backward(da);
        let da = self.bn1.backward(&da);
        let mut dx = self.conv1.backward(&da);
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let ds = bn.backward(&d);
                dx.add_assign(&conv.backward(&ds));
            }
            None => dx.add_assign(&d),
        }
        dx
    }
}

impl<R: Real> Module<R> for BasicBlock<R> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit(&join(prefix, "shortcut.conv"), f);
            bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }
}

const STAGE_NAMES: [&str; 4] = ["conv2", "conv3", "conv4", "conv5"];

/// Removes every pixel's temporal mean from `[N, C, T, H, W]` and scales
/// each clip to unit RMS. Static clips become zero.
pub fn detrend<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (n, c, t) = (x.dim(0), x.dim(1), x.dim(2));
    let plane = x.dim(3) * x.dim(4);
    let mut out = x.clone();
    for clip in out.data_mut().chunks_mut(c * t * plane) {
        let mut energy = 0.0;
        for channel in clip.chunks_mut(t * plane) {
            for p in 0..plane {
                let mean = (0..t).map(|f| channel[f * plane + p].to_f64()).sum::<f64>() / t as f64;
                for f in 0..t {
                    let v = channel[f * plane + p].to_f64() - mean;
                    energy += v * v;
                    channel[f * plane + p] = R::from_f64(v);
                }
            }
        }
        let rms = (energy / clip.len() as f64).sqrt();
        let scale = if rms > 1e-12 { 1.0 / rms } else { 0.0 };
        clip.iter_mut().for_each(|v| *v = R::from_f64(v.to_f64() * scale));
    }
    debug_assert_eq!(out.len(), n * c * t * plane);
    out
}

/// 3-D ResNet-18 video encoder ending in global average pooling.
#[derive(Debug, Clone)]
pub struct Encoder<R> {
    config: EncoderConfig,
    conv1: Conv3d<R>,
    bn1: BatchNorm<R>,
    relu1: Relu,
    pool: MaxPool3d,
    stages: Vec<Vec<BasicBlock<R>>>,
    pooled_from: Vec<usize>,
}

impl<R: Real> Encoder<R> {
    pub fn new(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let ch = config.stage_channels;
        let k = config.conv1_kernel;
        let mut conv1 = Conv3d::new(3, ch[0], [k; 3], [1, 2, 2], [k / 2; 3], rng);
        conv1.needs_input_grad = false;
        let stages = (0..4)
            .map(|s| {
                (0..config.blocks_per_stage)
                    .map(|b| {
                        let inputs = if b == 0 { ch[s] } else { ch[s + 1] };
                        let stride = if b == 0 && s > 0 { 2 } else { 1 };
                        BasicBlock::new(inputs, ch[s + 1], stride, rng)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            conv1,
            bn1: BatchNorm::new(ch[0]),
            relu1: Relu::default(),
            pool: MaxPool3d::new(3, 2, 1),
            stages,
            pooled_from: Vec::new(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<R>) -> Result<()> {
        let expected = self.config.input_shape();
        if x.shape().len() != 5 || x.dim(0) == 0 || x.shape()[1..] != expected {
            return Err(Error::ShapeMismatch {
                stage: "input".into(),
                reason: format!("expected [N, {}, {}, {}, {}], got {:?}", expected[0], expected[1], expected[2], expected[3], x.shape()),
            });
        }
        Ok(())
    }

    /// Pooled features `[N, feature_dim]`.
    pub fn forward(&mut self, x: &Tensor<R>, mode: Mode) -> Result<Tensor<R>> {
        self.forward_traced(x, mode).map(|(h, _)| h)
    }

    /// Like [`Encoder::forward`], also reporting the per-sample output shape of
    /// conv1, the max-pool, each residual stage and the pooled vector.
    pub fn forward_traced(&mut self, x: &Tensor<R>, mode: Mode) -> Result<(Tensor<R>, Vec<StageShape>)> {
        self.check_input(x)?;
        let mut trace = Vec::new();
        let mut note = |stage: &'static str, t: &Tensor<R>| -> Result<()> {
            if t.shape()[1..].contains(&0) {
                return Err(Error::ShapeMismatch {
                    stage: stage.into(),
                    reason: format!("input too small: stage output would be {:?}", &t.shape()[1..]),
                });
            }
            trace.push(StageShape {
                stage,
                shape: t.shape()[1..].to_vec(),
            });
            Ok(())
        };
        let (train, record) = (mode.train(), mode.train());
        let y = match self.config.input_norm {
            InputNorm::Raw => self.conv1.forward(x, record),
            InputNorm::Detrend => self.conv1.forward(&detrend(x), record),
        };
        let y = self.bn1.forward(&y, train, record);
        let y = self.relu1.forward(y, record);
        note("conv1", &y)?;
        let dims = self.pool.output_dims([y.dim(2), y.dim(3), y.dim(4)]);
        if dims.contains(&0) {
            return Err(Error::ShapeMismatch {
                stage: "maxpool".into(),
                reason: format!("cannot pool {:?}", &y.shape()[2..]),
            });
        }
        let mut y = self.pool.forward(&y, record);
        note("maxpool", &y)?;
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for block in stage.iter_mut() {
                let probe = block.conv1.output_dims([y.dim(2), y.dim(3), y.dim(4)]);
                if probe.contains(&0) {
                    return Err(Error::ShapeMismatch {
                        stage: STAGE_NAMES[s].into(),
                        reason: format!("cannot downsample {:?}", &y.shape()[2..]),
                    });
                }
                y = block.forward(&y, mode);
            }
            note(STAGE_NAMES[s], &y)?;
        }
        self.pooled_from = y.shape().to_vec();
        let h = global_avg_pool(&y);
        note("pool", &h)?;
        Ok((h, trace))
    }

    /// Backpropagates `dh` through a training-mode forward, accumulating
    /// parameter gradients.
    pub fn backward(&mut self, dh: &Tensor<R>) {
        let mut d = global_avg_pool_backward(dh, &self.pooled_from);
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                d = block.backward(d);
            }
        }
        let d = self.pool.backward(&d);
        let d = self.relu1.backward(d);
        let d = self.bn1.backward(&d);
        self.conv1.backward(&d);
    }
}

impl<R: Real> Module<R> for Encoder<R> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit(&join(prefix, &format!("{}.{b}", STAGE_NAMES[s])), f);
            }
        }
    }
}

/// Two-layer MLP (hidden width = input width, ReLU) followed by L2
/// normalisation.
#[derive(Debug, Clone)]
pub struct ProjectionHead<R> {
    pub fc1: Linear<R>,
    relu: Relu,
    pub fc2: Linear<R>,
    cache: Option<(Tensor<R>, Vec<R>)>,
}

impl<R: Real> ProjectionHead<R> {
    pub fn new(features: usize, projection_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Linear::new(features, features, rng),
            relu: Relu::default(),
            fc2: Linear::new(features, projection_dim, rng),
            cache: None,
        }
    }

    /// Unit-norm projections `[N, projection_dim]`.
    pub fn forward(&mut self, h: &Tensor<R>, record: bool) -> Tensor<R> {
        let a = self.fc1.forward(h, record);
        let a = self.relu.forward(a, record);
        let mut z = self.fc2.forward(&a, record);
        let width = z.dim(1);
        let mut norms = Vec::with_capacity(z.dim(0));
        for row in z.data_mut().chunks_mut(width) {
            let norm = R::from_f64(row.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt().max(1e-12));
            row.iter_mut().for_each(|v| *v = *v / norm);
            norms.push(norm);
        }
        self.cache = record.then(|| (z.clone(), norms));
        z
    }

    /// Gradient w.r.t. `h` given the gradient w.r.t. the normalised `z`.
    pub fn backward(&mut self, dz: &Tensor<R>) -> Tensor<R> {
        let (z, norms) = self.cache.take().expect("projection backward without a recorded forward");
        let width = z.dim(1);
        let mut draw = dz.clone();
        for (i, row) in draw.data_mut().chunks_mut(width).enumerate() {
            let zr = z.row(i);
            let along: R = zr.iter().zip(row.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &zv) in row.iter_mut().zip(zr) {
                *d = (*d - zv * along) / norms[i];
            }
        }
        let da = self.fc2.backward(&draw);
        let da = self.relu.backward(da);
        self.fc1.backward(&da)
    }
}

impl<R: Real> Module<R> for ProjectionHead<R> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

/// Outputs of the pretraining network for a batch of views.
#[derive(Debug, Clone)]
pub struct NetOutput<R> {
    pub h: Tensor<R>,
    pub z: Tensor<R>,
    pub roi_logits: Tensor<R>,
    pub stride_logits: Tensor<R>,
}

/// Encoder, projection head and the two pseudo-label classifiers.
#[derive(Debug, Clone)]
pub struct RppgNet<R> {
    config: NetConfig,
    pub encoder: Encoder<R>,
    pub projection: ProjectionHead<R>,
    pub roi_head: Linear<R>,
    pub stride_head: Linear<R>,
}

impl<R: Real> RppgNet<R> {
    /// Deterministic initialisation from `config.seed`.
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::new(&config.encoder, &mut rng)?;
        let features = config.encoder.feature_dim();
        let projection = ProjectionHead::new(features, config.projection_dim, &mut rng);
        let roi_head = Linear::zero_bias(features, config.n_rois, &mut rng);
        let stride_head = Linear::zero_bias(features, config.n_strides, &mut rng);
        Ok(Self {
            config: config.clone(),
            encoder,
            projection,
            roi_head,
            stride_head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn forward(&mut self, x: &Tensor<R>, mode: Mode) -> Result<NetOutput<R>> {
        let record = mode.train();
        let h = self.encoder.forward(x, mode)?;
        let z = self.projection.forward(&h, record);
        let roi_logits = self.roi_head.forward(&h, record);
        let stride_logits = self.stride_head.forward(&h, record);
        Ok(NetOutput {
            h,
            z,
            roi_logits,
            stride_logits,
        })
    }

    /// Backpropagates gradients of a loss w.r.t. `z` and both logit sets.
    pub fn backward(&mut self, dz: &Tensor<R>, droi: &Tensor<R>, dstride: &Tensor<R>) {
        let mut dh = self.projection.backward(dz);
        dh.add_assign(&self.roi_head.backward(droi));
        dh.add_assign(&self.stride_head.backward(dstride));
        self.encoder.backward(&dh);
    }
}

impl<R: Real> Module<R> for RppgNet<R> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.projection.visit(&join(prefix, "projection"), f);
        self.roi_head.visit(&join(prefix, "roi_head"), f);
        self.stride_head.visit(&join(prefix, "stride_head"), f);
    }
}
