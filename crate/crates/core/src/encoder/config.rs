use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Tiny,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "tiny" => Ok(Self::Tiny),
            other => Err(Error::Config(format!("unknown encoder variant `{other}` (full or tiny)"))),
        }
    }
}

/// Parameter-free transform applied to every input clip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputNorm {
    /// Pixels as given.
    Raw,
    /// Each pixel's temporal mean is removed and the clip is scaled to unit
    /// RMS, leaving only the colour fluctuations.
    #[default]
    Detrend,
}

impl std::str::FromStr for InputNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "detrend" => Ok(Self::Detrend),
            other => Err(Error::Config(format!("unknown input norm `{other}` (raw or detrend)"))),
        }
    }
}

/// 3-D ResNet-18 layout.
///
/// `stage_channels` are the widths of conv1 and of the four residual stages
/// (conv2_x .. conv5_x). conv1 is `k^3` with stride (1, 2, 2); the first block
/// of conv3_x, conv4_x and conv5_x downsamples by 2 on every axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: Variant,
    pub stage_channels: [usize; 5],
    pub blocks_per_stage: usize,
    pub conv1_kernel: usize,
    /// Expected input frames.
    pub clip_len: usize,
    /// Expected input height and width.
    pub frame_size: usize,
    #[serde(default)]
    pub input_norm: InputNorm,
}

impl EncoderConfig {
    pub fn full() -> Self {
        Self {
            variant: Variant::Full,
            stage_channels: [64, 64, 128, 256, 512],
            blocks_per_stage: 2,
            conv1_kernel: 7,
            clip_len: 30,
            frame_size: 64,
            input_norm: InputNorm::default(),
        }
    }

    pub fn tiny() -> Self {
        Self {
            variant: Variant::Tiny,
            stage_channels: [16, 16, 32, 64, 64],
            blocks_per_stage: 2,
            conv1_kernel: 7,
            clip_len: 16,
            frame_size: 32,
            input_norm: InputNorm::default(),
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Full => Self::full(),
            Variant::Tiny => Self::tiny(),
        }
    }

    pub fn with_input(mut self, clip_len: usize, frame_size: usize) -> Self {
        self.clip_len = clip_len;
        self.frame_size = frame_size;
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.stage_channels[4]
    }

    /// `[channels, frames, height, width]` of one input clip.
    pub fn input_shape(&self) -> [usize; 4] {
        [3, self.clip_len, self.frame_size, self.frame_size]
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.contains(&0) || self.blocks_per_stage == 0 {
            return Err(Error::Config("encoder widths and block counts must be positive".into()));
        }
        if self.conv1_kernel % 2 == 0 {
            return Err(Error::Config(format!("conv1 kernel {} must be odd", self.conv1_kernel)));
        }
        if self.clip_len == 0 || self.frame_size == 0 {
            return Err(Error::Config("encoder input extent must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to build the pretraining network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    pub projection_dim: usize,
    pub n_rois: usize,
    pub n_strides: usize,
    pub seed: u64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.projection_dim == 0 || self.n_rois == 0 || self.n_strides == 0 {
            return Err(Error::Config("projection and classifier widths must be positive".into()));
        }
        Ok(())
    }
}
