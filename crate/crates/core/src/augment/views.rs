//! Spatial (region crop) and temporal (stride) views with pseudo-labels.

use ndarray::{s, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::roi::{roi_layout, RoiId};
use crate::dataio::{resize_plane, Clip, LandmarkSet};
use crate::error::{Error, Result};
use crate::signal::nyquist_max_stride;

/// Upper end of the physiological heart-rate band that strides must respect.
pub const HR_MAX_BPM: f64 = 160.0;

/// Augmentation settings shared by every view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub strides: Vec<usize>,
    pub rois: Vec<RoiId>,
    /// Frames per view.
    pub clip_len: usize,
    /// Side length of the square view frames.
    pub frame_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            strides: vec![1, 2, 3, 4, 5],
            rois: RoiId::ALL.to_vec(),
            clip_len: 30,
            frame_size: 64,
        }
    }
}

impl AugmentConfig {
    /// Rejects empty lists, zero strides, duplicates and any stride that
    /// undersamples the heart-rate band at `fps`.
    pub fn validate(&self, fps: f64) -> Result<()> {
        if self.strides.is_empty() || self.rois.is_empty() {
            return Err(Error::Config("strides and rois must be non-empty".into()));
        }
        if self.clip_len < 2 || self.frame_size < 8 {
            return Err(Error::Config(format!(
                "clip_len {} / frame_size {} too small",
                self.clip_len, self.frame_size
            )));
        }
        let mut strides = self.strides.clone();
        strides.sort_unstable();
        strides.dedup();
        if strides.len() != self.strides.len() {
            return Err(Error::Config("duplicate stride".into()));
        }
        let mut rois = self.rois.clone();
        rois.sort_unstable();
        rois.dedup();
        if rois.len() != self.rois.len() {
            return Err(Error::Config("duplicate roi".into()));
        }
        if strides[0] == 0 {
            return Err(Error::Config("strides must be >= 1".into()));
        }
        let max_stride = nyquist_max_stride(fps, HR_MAX_BPM)?;
        if let Some(&bad) = strides.iter().find(|&&s| s > max_stride) {
            return Err(Error::StrideViolatesNyquist {
                stride: bad,
                fps,
                hr_max_bpm: HR_MAX_BPM,
                max_stride,
            });
        }
        Ok(())
    }

    /// Frames a source clip needs to host a view at the largest stride.
    pub fn required_frames(&self) -> usize {
        let max_stride = self.strides.iter().copied().max().unwrap_or(1);
        (self.clip_len - 1) * max_stride + 1
    }
}

/// Augmentation class indices `(m, n)`: zero-based positions in the
/// configured ROI and stride lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub roi: usize,
    pub stride: usize,
}

/// One random draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub label: PseudoLabel,
    pub stride: usize,
    pub start: usize,
    pub roi: RoiId,
}

/// A view produced from a source clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    /// `clip_len` frames of `frame_size x frame_size`, fps = source fps / stride.
    pub clip: Clip,
    pub label: PseudoLabel,
    pub roi: RoiId,
    pub stride: usize,
    pub source_clip_id: String,
    pub start_frame: usize,
    /// The region was clipped to the frame in at least one frame.
    pub clamped: bool,
}

/// Crop of one region, resized to a square frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiCrop {
    pub clip: Clip,
    pub clamped: bool,
}

/// Crops `roi` from every frame and resizes it to `size x size`.
///
/// Only geometry changes: when the region is already `size x size` the
/// output pixels are copied verbatim.
pub fn roi_crop(clip: &Clip, landmarks: &LandmarkSet, roi: RoiId, size: usize) -> Result<RoiCrop> {
    clip.validate()?;
    let (c, t, h, w) = clip.pixels.dim();
    if !landmarks.is_static() && landmarks.points.len() != t {
        return Err(Error::InvalidLandmarks(format!(
            "{} landmark entries for {t} frames",
            landmarks.points.len()
        )));
    }
    let mut out = Array4::zeros((c, t, size, size));
    let mut clamped = false;
    let mut cached = None;
    for f in 0..t {
        let layout = match (landmarks.is_static(), cached) {
            (true, Some(layout)) => layout,
            _ => {
                let layout = roi_layout(landmarks.frame(f), w, h)?;
                cached = Some(layout);
                layout
            }
        };
        clamped |= layout.clamped;
        let r = layout.layout.get(roi);
        for ci in 0..c {
            let region = clip.pixels.slice(s![ci, f, r.y0..r.y1, r.x0..r.x1]);
            out.slice_mut(s![ci, f, .., ..])
                .assign(&resize_plane(region, size, size));
        }
    }
    Ok(RoiCrop {
        clip: Clip {
            pixels: out,
            ..clip.clone()
        },
        clamped,
    })
}

fn check_span(frames: usize, stride: usize, out_len: usize, start: usize) -> Result<()> {
    if stride == 0 || out_len == 0 {
        return Err(Error::InvalidClip(format!("stride {stride} / length {out_len} must be positive")));
    }
    let last = start + (out_len - 1) * stride;
    if last >= frames {
        return Err(Error::ClipTooShort {
            frames,
            reason: format!("stride {stride} x {out_len} frames from start {start} needs frame {last}"),
        });
    }
    Ok(())
}

/// Frames `start, start + stride, ...` (`out_len` of them), bit-exact, with
/// the effective frame rate `fps / stride`.
pub fn temporal_subsample(clip: &Clip, stride: usize, out_len: usize, start: usize) -> Result<Clip> {
    check_span(clip.frames(), stride, out_len, start)?;
    let indices: Vec<usize> = (0..out_len).map(|j| start + j * stride).collect();
    Ok(clip.select_frames(&indices, clip.fps / stride as f64))
}

/// Uniform random start for a strided window.
pub fn random_start<R: Rng + ?Sized>(frames: usize, stride: usize, out_len: usize, rng: &mut R) -> Result<usize> {
    check_span(frames, stride, out_len, 0)?;
    let span = (out_len - 1) * stride + 1;
    Ok(rng.random_range(0..=frames - span))
}

/// Draws stride, start and then region, each uniformly and independently.
pub fn sample_augmentation<R: Rng + ?Sized>(config: &AugmentConfig, frames: usize, rng: &mut R) -> Result<AugmentDraw> {
    let stride_index = rng.random_range(0..config.strides.len());
    let stride = config.strides[stride_index];
    let start = random_start(frames, stride, config.clip_len, rng)?;
    let roi_index = rng.random_range(0..config.rois.len());
    Ok(AugmentDraw {
        label: PseudoLabel {
            roi: roi_index,
            stride: stride_index,
        },
        stride,
        start,
        roi: config.rois[roi_index],
    })
}

/// Applies a drawn augmentation: temporal subsampling, then region crop.
pub fn apply_augmentation(
    clip: &Clip,
    landmarks: &LandmarkSet,
    config: &AugmentConfig,
    draw: AugmentDraw,
) -> Result<AugmentedView> {
    let strided = temporal_subsample(clip, draw.stride, config.clip_len, draw.start)?;
    let indices: Vec<usize> = (0..config.clip_len)
        .map(|j| draw.start + j * draw.stride)
        .collect();
    let landmarks = landmarks.select_frames(&indices);
    let crop = roi_crop(&strided, &landmarks, draw.roi, config.frame_size)?;
    Ok(AugmentedView {
        clip: crop.clip,
        label: draw.label,
        roi: draw.roi,
        stride: draw.stride,
        source_clip_id: clip.video_id.clone(),
        start_frame: draw.start,
        clamped: crop.clamped,
    })
}

pub fn augment_view<R: Rng + ?Sized>(
    clip: &Clip,
    landmarks: &LandmarkSet,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedView> {
    let draw = sample_augmentation(config, clip.frames(), rng)?;
    apply_augmentation(clip, landmarks, config, draw)
}

/// Two independent views of one clip, returned as `(view 1, view 2)`.
pub fn augment_pair<R: Rng + ?Sized>(
    clip: &Clip,
    landmarks: &LandmarkSet,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(AugmentedView, AugmentedView)> {
    if clip.frames() < config.required_frames() {
        return Err(Error::ClipTooShort {
            frames: clip.frames(),
            reason: format!("largest stride needs {} frames", config.required_frames()),
        });
    }
    let first = augment_view(clip, landmarks, config, rng)?;
    let second = augment_view(clip, landmarks, config, rng)?;
    Ok((first, second))
}
