use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, RoiId};
use crate::encoder::{EncoderConfig, NetConfig};
use crate::error::{Error, Result};

/// Learning-rate schedule over all optimiser steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to zero.
    Cosine,
}

impl LrSchedule {
    pub fn at(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown lr schedule `{other}` (constant or cosine)"))),
        }
    }
}

/// Self-supervised pretraining settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub projection_dim: usize,
    pub tau: f64,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    /// Videos per step; each contributes two views.
    pub batch_size: usize,
    pub epochs: usize,
    pub strides: Vec<usize>,
    pub rois: Vec<RoiId>,
    pub seed: u64,
    /// Adds the ROI and stride cross-entropies to the contrastive loss.
    pub use_pseudo_labels: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2 to provide negatives, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.projection_dim == 0 {
            return bad("projection_dim must be positive".into());
        }
        Ok(())
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            strides: self.strides.clone(),
            rois: self.rois.clone(),
            clip_len: self.encoder.clip_len,
            frame_size: self.encoder.frame_size,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            encoder: self.encoder.clone(),
            projection_dim: self.projection_dim,
            n_rois: self.rois.len(),
            n_strides: self.strides.len(),
            seed: self.seed,
        }
    }
}

/// Downstream heart-rate protocol settings.
///
/// Evaluation windows are `clip_len` frames of the encoder taken every
/// `eval_stride` frames from the whole-face crop, tiled without overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub eval_stride: usize,
    /// Cap on windows per clip; 0 keeps every window.
    pub max_windows: usize,
    pub head_lr: f64,
    pub head_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_batch_size: usize,
    /// Windows per inference forward pass.
    pub inference_batch: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eval_stride: 2,
            max_windows: 0,
            head_lr: 0.01,
            head_epochs: 500,
            finetune_lr: 1e-4,
            finetune_epochs: 10,
            finetune_batch_size: 8,
            inference_batch: 32,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.eval_stride == 0 || self.inference_batch == 0 {
            return bad("eval_stride and inference_batch must be positive".into());
        }
        if !(self.head_lr > 0.0 && self.finetune_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.finetune_batch_size < 2 {
            return bad("finetune_batch_size must be at least 2 for batch statistics".into());
        }
        Ok(())
    }
}
