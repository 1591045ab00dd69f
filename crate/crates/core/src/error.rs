use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
///
/// Variants are grouped by the subsystem that raises them so callers (the
/// CLI in particular) can map them to distinct exit statuses.
#[derive(Debug, Error)]
pub enum Error {
    // -- synthesis / signal -------------------------------------------------
    #[error("invalid reflection-model parameters: {0}")]
    InvalidParams(String),
    #[error("heart rate {0} bpm outside the supported range [40, 160]")]
    HeartRateOutOfRange(f64),
    #[error("invalid synthetic scene: {0}")]
    InvalidScene(String),
    #[error("trace too short for spectral estimation: {len} samples, need at least {required}")]
    TraceTooShort { len: usize, required: usize },
    #[error("no dominant spectral peak (peak power {peak:.3e} < 2x median in-band power {median:.3e})")]
    NoDominantPeak { peak: f64, median: f64 },
    #[error("no stride satisfies the Nyquist bound at {fps} fps for heart rates up to {hr_max_bpm} bpm")]
    NyquistUnsatisfiable { fps: f64, hr_max_bpm: f64 },
    #[error("stride {stride} at {fps} fps undersamples heart rates up to {hr_max_bpm} bpm (max stride {max_stride})")]
    StrideViolatesNyquist {
        stride: usize,
        fps: f64,
        hr_max_bpm: f64,
        max_stride: usize,
    },

    // -- clips / preprocessing ----------------------------------------------
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("clip of {frames} frames too short: {reason}")]
    ClipTooShort { frames: usize, reason: String },
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),
    #[error("degenerate region of interest {roi}: {reason}")]
    DegenerateRoi { roi: String, reason: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("split is not subject-exclusive: {0:?} appear in both train and test")]
    SplitOverlap(Vec<String>),

    // -- persistence ----------------------------------------------------------
    #[error("missing metadata file {0}")]
    MissingMeta(PathBuf),
    #[error("invalid metadata for clip {clip}: {reason}")]
    InvalidMetadata { clip: String, reason: String },
    #[error("landmark count mismatch for clip {clip}: {landmark_frames} landmark frames for {frames} video frames")]
    LandmarkFrameMismatch {
        clip: String,
        landmark_frames: usize,
        frames: usize,
    },
    #[error("label references unknown clip {subject}/{clip}")]
    UnknownLabelClip { subject: String, clip: String },
    #[error("clip {subject}/{clip} has no label")]
    MissingLabel { subject: String, clip: String },
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    // -- model / losses -------------------------------------------------------
    #[error("shape mismatch at {stage}: {reason}")]
    ShapeMismatch { stage: String, reason: String },
    #[error("invalid loss input: {0}")]
    InvalidLossInput(String),
    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    // -- metrics / config -----------------------------------------------------
    #[error("invalid metric input: {0}")]
    InvalidMetricInput(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by the CLI to select an exit status.
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | StrideViolatesNyquist { .. } | NyquistUnsatisfiable { .. } => {
                ErrorKind::Config
            }
            Diverged { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}
