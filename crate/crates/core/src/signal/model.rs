//! Per-pixel dichromatic skin reflection:
//!
//! `C(t) = I(t) * (u_s * (s0 + s(t)) + u_d * d0 + u_p * p(t)) + v_n(t)`

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

pub const HR_MIN_BPM: f64 = 40.0;
pub const HR_MAX_BPM: f64 = 160.0;
/// Upper frequency of the slow specular-motion mode.
pub const MOTION_MAX_HZ: f64 = 0.3;
const UNIT_TOLERANCE: f64 = 1e-9;
/// Relative amplitude of the optional second harmonic.
pub const HARMONIC_AMPLITUDE: f64 = 0.3;

/// RNG stream used for the sensor noise of a single trace.
pub(crate) const TRACE_NOISE_STREAM: u64 = 0;

pub fn norm(v: Rgb) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v / |v|`.
pub fn unit(v: Rgb) -> Rgb {
    let n = norm(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Light-source intensity `I(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntensityFn {
    Constant(f64),
    /// `base + amplitude * sin(2 pi freq t + phase)`.
    Ripple {
        base: f64,
        amplitude: f64,
        freq_hz: f64,
        phase: f64,
    },
}

impl IntensityFn {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            IntensityFn::Constant(level) => level,
            IntensityFn::Ripple {
                base,
                amplitude,
                freq_hz,
                phase,
            } => base + amplitude * (TAU * freq_hz * t + phase).sin(),
        }
    }

    /// Smallest value the function can take.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            IntensityFn::Constant(level) => level,
            IntensityFn::Ripple { base, amplitude, .. } => base - amplitude.abs(),
        }
    }
}

/// Varying specular strength `s(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MotionFn {
    Still,
    /// Slow sway, `amplitude * sin(2 pi freq t + phase)` with `freq < 0.3 Hz`.
    Sinusoid { amplitude: f64, freq_hz: f64, phase: f64 },
}

impl MotionFn {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            MotionFn::Still => 0.0,
            MotionFn::Sinusoid {
                amplitude,
                freq_hz,
                phase,
            } => amplitude * (TAU * freq_hz * t + phase).sin(),
        }
    }
}

/// Parameters of the reflection model (everything except the pulse).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrmParams {
    pub intensity: IntensityFn,
    /// Unit colour of the light spectrum.
    pub u_s: Rgb,
    pub s0: f64,
    pub motion: MotionFn,
    /// Unit colour of the skin.
    pub u_d: Rgb,
    pub d0: f64,
    /// Relative pulse strength per channel.
    pub u_p: Rgb,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DrmParams {
    fn default() -> Self {
        Self {
            intensity: IntensityFn::Constant(1.0),
            u_s: unit([1.0, 1.0, 1.0]),
            s0: 0.05,
            motion: MotionFn::Still,
            u_d: unit([0.75, 0.5, 0.4]),
            d0: 0.6,
            u_p: [0.01, 0.02, 0.01],
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl DrmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        for (name, v) in [("u_s", self.u_s), ("u_d", self.u_d)] {
            if (norm(v) - 1.0).abs() > UNIT_TOLERANCE {
                return bad(format!("{name} must be a unit vector, |{name}| = {}", norm(v)));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.s0 >= 0.0 && self.d0 >= 0.0) {
            return bad(format!("s0 and d0 must be >= 0, got {} / {}", self.s0, self.d0));
        }
        if self.u_p.iter().any(|x| !x.is_finite()) {
            return bad("u_p must be finite".into());
        }
        if self.intensity.lower_bound() <= 0.0 {
            return bad(format!(
                "light intensity must stay positive, lower bound {}",
                self.intensity.lower_bound()
            ));
        }
        if let MotionFn::Sinusoid { freq_hz, .. } = self.motion {
            if !(0.0..MOTION_MAX_HZ).contains(&freq_hz) {
                return bad(format!("motion frequency {freq_hz} Hz not in [0, {MOTION_MAX_HZ})"));
            }
        }
        Ok(())
    }

    /// Noise-free colour of a skin pixel at time `t` given the pulse value.
    pub fn noiseless_at(&self, t: f64, pulse: f64) -> Rgb {
        self.colour_at(t, pulse, 1.0)
    }

    /// Noise-free colour under a local irradiance factor `shade`.
    pub(crate) fn colour_at(&self, t: f64, pulse: f64, shade: f64) -> Rgb {
        let light = self.intensity.at(t);
        let specular = self.s0 + self.motion.at(t);
        std::array::from_fn(|c| {
            light * shade * (self.u_s[c] * specular + self.u_d[c] * self.d0 + self.u_p[c] * pulse)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseShape {
    Sinusoid,
    /// Fundamental plus a 0.3-amplitude second harmonic, rescaled to `[-1, 1]`.
    SinusoidPlusHarmonic,
}

/// Blood-volume pulse `p(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseWaveform {
    pub hr_bpm: f64,
    pub shape: PulseShape,
    pub phase: f64,
}

/// Peak of `sin x + a sin 2x`: the maximum sits where `cos x = c` with
/// `2a(2c^2 - 1) + c = 0`.
fn harmonic_peak() -> f64 {
    let a = HARMONIC_AMPLITUDE;
    let c = (-1.0 + (1.0 + 32.0 * a * a).sqrt()) / (8.0 * a);
    let s = (1.0 - c * c).sqrt();
    s + a * 2.0 * s * c
}

impl PulseWaveform {
    pub fn new(hr_bpm: f64, shape: PulseShape, phase: f64) -> Result<Self> {
        let pulse = Self { hr_bpm, shape, phase };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn sinusoid(hr_bpm: f64) -> Result<Self> {
        Self::new(hr_bpm, PulseShape::Sinusoid, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&self.hr_bpm) {
            return Err(Error::HeartRateOutOfRange(self.hr_bpm));
        }
        if !self.phase.is_finite() {
            return Err(Error::InvalidParams("pulse phase must be finite".into()));
        }
        Ok(())
    }

    /// Fundamental frequency in Hz.
    pub fn frequency_hz(&self) -> f64 {
        self.hr_bpm / 60.0
    }

    pub fn at(&self, t: f64) -> f64 {
        self.shifted(t, 0.0)
    }

    /// `p(t)` with an extra phase offset.
    pub fn shifted(&self, t: f64, extra_phase: f64) -> f64 {
        let theta = TAU * self.frequency_hz() * t + self.phase + extra_phase;
        match self.shape {
            PulseShape::Sinusoid => theta.sin(),
            PulseShape::SinusoidPlusHarmonic => {
                (theta.sin() + HARMONIC_AMPLITUDE * (2.0 * theta).sin()) / harmonic_peak()
            }
        }
    }
}

/// RGB trace of a single skin pixel over `n_frames` frames sampled at `fps`.
///
/// Sensor noise is i.i.d. Gaussian per channel, drawn from a generator
/// seeded by `params.seed`, so the result is deterministic.
pub fn skin_pixel_trace(params: &DrmParams, pulse: &PulseWaveform, fps: f64, n_frames: usize) -> Result<Vec<Rgb>> {
    params.validate()?;
    pulse.validate()?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::InvalidParams(format!("fps must be positive, got {fps}")));
    }
    if n_frames == 0 {
        return Err(Error::InvalidParams("n_frames must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(TRACE_NOISE_STREAM);
    Ok((0..n_frames)
        .map(|i| {
            let t = i as f64 / fps;
            let mut rgb = params.noiseless_at(t, pulse.at(t));
            if params.noise_sigma > 0.0 {
                for v in &mut rgb {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += params.noise_sigma * z;
                }
            }
            rgb
        })
        .collect())
}
