//! Labelled synthetic corpora: many subjects, several clips each.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{unit, DrmParams, IntensityFn, PulseShape, PulseWaveform, HR_MAX_BPM, HR_MIN_BPM};
use super::scene::{generate_synthetic_video, random_face, Shading, SyntheticScene};
use crate::dataio::{DatasetItem, HrLabel};
use crate::error::{Error, Result};

/// Settings for a synthetic corpus.
///
/// Every subject gets its own skin colour, diffuse strength, face placement
/// and shading; every clip its own heart rate, pulse phase and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_subjects: usize,
    pub clips_per_subject: usize,
    pub frame_size: usize,
    pub fps: f64,
    pub n_frames: usize,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    pub noise_sigma: f64,
    /// Green-channel pulse amplitude; red and blue are 0.5x and 0.6x of it.
    pub pulse_strength: f64,
    /// Relative amplitude of the periodic illumination component (0 disables it).
    pub ripple_amplitude: f64,
    pub ripple_hz: f64,
    pub shading: Shading,
    /// Draws eyes, brows and lips over the skin.
    #[serde(default = "enabled")]
    pub facial_features: bool,
    pub seed: u64,
}

fn enabled() -> bool {
    true
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_subjects: 25,
            clips_per_subject: 10,
            frame_size: 64,
            fps: 30.0,
            n_frames: 150,
            hr_min_bpm: HR_MIN_BPM,
            hr_max_bpm: HR_MAX_BPM,
            noise_sigma: 0.02,
            pulse_strength: 0.02,
            ripple_amplitude: 0.0,
            ripple_hz: 2.85,
            shading: Shading::default(),
            facial_features: true,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_subjects == 0 || self.clips_per_subject == 0 {
            return bad("corpus needs at least one subject and clip".into());
        }
        if !(HR_MIN_BPM <= self.hr_min_bpm && self.hr_min_bpm <= self.hr_max_bpm && self.hr_max_bpm <= HR_MAX_BPM) {
            return bad(format!("heart-rate range [{}, {}] outside [40, 160]", self.hr_min_bpm, self.hr_max_bpm));
        }
        if !(0.0..1.0).contains(&self.ripple_amplitude) {
            return bad(format!("ripple_amplitude {} not in [0, 1)", self.ripple_amplitude));
        }
        if self.pulse_strength < 0.0 || self.noise_sigma < 0.0 {
            return bad("pulse_strength and noise_sigma must be >= 0".into());
        }
        Ok(())
    }

    pub fn subject_id(&self, subject: usize) -> String {
        format!("subject{subject:03}")
    }
}

/// Generates the corpus, ordered by subject then clip.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<DatasetItem>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items = Vec::with_capacity(config.n_subjects * config.clips_per_subject);
    for subject in 0..config.n_subjects {
        let tone = [0.75, 0.5, 0.4].map(|c: f64| c + rng.random_range(-0.08..0.08));
        let d0 = rng.random_range(0.5..0.7);
        let jitter = |rng: &mut ChaCha8Rng, v: f64| v * rng.random_range(0.8..1.2);
        let shading = Shading {
            horizontal: jitter(&mut rng, config.shading.horizontal),
            vertical: jitter(&mut rng, config.shading.vertical),
            radial: jitter(&mut rng, config.shading.radial),
        };
        let mut scene = SyntheticScene::new(
            config.frame_size,
            config.fps,
            config.n_frames,
            random_face(config.frame_size, &mut rng),
        )?;
        scene.shading = shading;
        scene.facial_features = config.facial_features;
        let subject_id = config.subject_id(subject);

        for clip in 0..config.clips_per_subject {
            let hr = rng.random_range(config.hr_min_bpm..=config.hr_max_bpm);
            let shape = if rng.random_bool(0.5) {
                PulseShape::Sinusoid
            } else {
                PulseShape::SinusoidPlusHarmonic
            };
            let pulse = PulseWaveform::new(hr, shape, rng.random_range(0.0..TAU))?;
            let gain = rng.random_range(0.8..1.2) * config.pulse_strength;
            let intensity = if config.ripple_amplitude > 0.0 {
                IntensityFn::Ripple {
                    base: 1.0,
                    amplitude: config.ripple_amplitude,
                    freq_hz: config.ripple_hz,
                    phase: rng.random_range(0.0..TAU),
                }
            } else {
                IntensityFn::Constant(1.0)
            };
            let params = DrmParams {
                intensity,
                u_d: unit(tone),
                d0,
                u_p: [0.5 * gain, gain, 0.6 * gain],
                noise_sigma: config.noise_sigma,
                seed: rng.random(),
                ..DrmParams::default()
            };
            let video = generate_synthetic_video(&scene, &params, &pulse)?;
            let clip_id = format!("c{clip:03}");
            let mut clip_data = video.clip;
            clip_data.subject_id = subject_id.clone();
            clip_data.video_id = format!("{subject_id}_{clip_id}");
            items.push(DatasetItem {
                clip: clip_data,
                landmarks: video.landmarks,
                label: HrLabel::new(subject_id.clone(), clip_id, hr)?,
            });
        }
    }
    Ok(items)
}
