use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points in the 68-point facial annotation scheme.
pub const LANDMARK_COUNT: usize = 68;

/// An `(x, y)` landmark position in pixel coordinates.
pub type Point = [f64; 2];

/// A video clip: `channels(3) x frames x height x width`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub pixels: Array4<f32>,
    pub fps: f64,
    pub subject_id: String,
    pub video_id: String,
}

impl Clip {
    pub fn new(
        pixels: Array4<f32>,
        fps: f64,
        subject_id: impl Into<String>,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        let clip = Self {
            pixels,
            fps,
            subject_id: subject_id.into(),
            video_id: video_id.into(),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, t, h, w) = self.pixels.dim();
        if c != 3 {
            return Err(Error::InvalidClip(format!("expected 3 channels, got {c}")));
        }
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidClip(format!("empty clip {c}x{t}x{h}x{w}")));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidClip(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn frames(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().3
    }

    /// Duration covered by the clip in seconds.
    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.fps
    }

    /// Per-frame spatial mean of each channel.
    pub fn mean_rgb_trace(&self) -> Vec<[f64; 3]> {
        let (_, t, h, w) = self.pixels.dim();
        let area = (h * w) as f64;
        (0..t)
            .map(|f| {
                let mut rgb = [0.0; 3];
                for (c, v) in rgb.iter_mut().enumerate() {
                    let plane = self.pixels.slice(s![c, f, .., ..]);
                    *v = plane.iter().map(|&p| p as f64).sum::<f64>() / area;
                }
                rgb
            })
            .collect()
    }

    /// Per-frame spatial mean of the green channel, the usual pulse proxy.
    pub fn mean_trace(&self) -> Vec<f64> {
        self.mean_rgb_trace().into_iter().map(|rgb| rgb[1]).collect()
    }

    /// New clip built from the listed frames, in order.
    pub fn select_frames(&self, indices: &[usize], fps: f64) -> Clip {
        let pixels = self.pixels.select(Axis(1), indices);
        Clip {
            pixels,
            fps,
            subject_id: self.subject_id.clone(),
            video_id: self.video_id.clone(),
        }
    }
}

/// Facial landmarks in the 68-point scheme, either one static set for the
/// whole clip or one set per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<Vec<Point>>,
}

impl LandmarkSet {
    pub fn fixed(points: Vec<Point>) -> Self {
        Self {
            points: vec![points],
        }
    }

    pub fn per_frame(points: Vec<Vec<Point>>) -> Self {
        Self { points }
    }

    pub fn is_static(&self) -> bool {
        self.points.len() == 1
    }

    /// Landmarks for frame `index` (the static set for every frame).
    pub fn frame(&self, index: usize) -> &[Point] {
        if self.is_static() {
            &self.points[0]
        } else {
            &self.points[index]
        }
    }

    /// Checks point counts, frame coverage and bounds for a clip of the
    /// given geometry.
    pub fn validate(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidLandmarks("no landmark entries".into()));
        }
        if !self.is_static() && self.points.len() != frames {
            return Err(Error::InvalidLandmarks(format!(
                "{} landmark entries for {frames} frames",
                self.points.len()
            )));
        }
        for (i, entry) in self.points.iter().enumerate() {
            if entry.len() != LANDMARK_COUNT {
                return Err(Error::InvalidLandmarks(format!(
                    "entry {i} has {} points, expected {LANDMARK_COUNT}",
                    entry.len()
                )));
            }
            for (j, &[x, y]) in entry.iter().enumerate() {
                let inside = x.is_finite()
                    && y.is_finite()
                    && (0.0..=width as f64).contains(&x)
                    && (0.0..=height as f64).contains(&y);
                if !inside {
                    return Err(Error::InvalidLandmarks(format!(
                        "entry {i} point {} at ({x}, {y}) outside {width}x{height} frame",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Landmarks following a frame selection; static sets are unchanged.
    pub fn select_frames(&self, indices: &[usize]) -> LandmarkSet {
        if self.is_static() {
            self.clone()
        } else {
            LandmarkSet {
                points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            }
        }
    }

    /// Landmarks after resizing the frame by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> LandmarkSet {
        LandmarkSet {
            points: self
                .points
                .iter()
                .map(|entry| entry.iter().map(|&[x, y]| [x * sx, y * sy]).collect())
                .collect(),
        }
    }
}

/// Ground-truth heart rate for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrLabel {
    pub subject_id: String,
    pub clip_id: String,
    pub hr_bpm: f64,
}

impl HrLabel {
    pub fn new(subject_id: impl Into<String>, clip_id: impl Into<String>, hr_bpm: f64) -> Result<Self> {
        let label = Self {
            subject_id: subject_id.into(),
            clip_id: clip_id.into(),
            hr_bpm,
        };
        label.validate()?;
        Ok(label)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hr_bpm.is_finite() && self.hr_bpm > 0.0 && self.hr_bpm < 300.0) {
            return Err(Error::InvalidLabel(format!(
                "{}/{}: hr_bpm {} outside (0, 300)",
                self.subject_id, self.clip_id, self.hr_bpm
            )));
        }
        Ok(())
    }
}

/// A clip with its landmarks and label, the unit every loader yields.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub clip: Clip,
    pub landmarks: LandmarkSet,
    pub label: HrLabel,
}
