//! Dichromatic skin-reflection synthesis, a spectral heart-rate oracle and
//! Nyquist stride limits.

mod corpus;
mod model;
mod scene;
mod spectrum;

pub use corpus::{generate_corpus, CorpusConfig};
pub use model::{
    norm, skin_pixel_trace, unit, DrmParams, IntensityFn, MotionFn, PulseShape, PulseWaveform,
    Rgb, HARMONIC_AMPLITUDE, HR_MAX_BPM, HR_MIN_BPM, MOTION_MAX_HZ,
};
pub use scene::{
    default_face, face_template, generate_synthetic_video, random_face, Shading, SyntheticScene,
    SyntheticVideo, AMPLITUDE_JITTER, PHASE_JITTER,
};
pub use spectrum::{
    hr_oracle_clip, hr_oracle_fft, nyquist_max_stride, stride_is_nyquist_safe,
    ORACLE_MIN_SECONDS, ORACLE_RESOLUTION_BPM,
};
