use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::TAU;

use super::model::{HR_MAX_BPM, HR_MIN_BPM};
use crate::dataio::Clip;
use crate::error::{Error, Result};

/// Frequency resolution the zero-padded spectrum must reach, in bpm.
pub const ORACLE_RESOLUTION_BPM: f64 = 0.5;
/// Minimum trace duration accepted by the oracle, in seconds.
pub const ORACLE_MIN_SECONDS: f64 = 2.0;

/// Heart rate (bpm) at the power-spectrum peak of the mean-removed trace,
/// searched over 40-160 bpm.
///
/// The trace is Hann-tapered before the transform: with only a few cycles in
/// a 5 s window, leakage from the negative-frequency image and the second
/// harmonic would otherwise pull the peak by more than a bpm. It is then
/// zero-padded so bins are at most 0.5 bpm apart and the peak
/// is refined by a parabola through its neighbours. A peak weaker than twice
/// the median in-band power is reported as [`Error::NoDominantPeak`].
pub fn hr_oracle_fft(trace: &[f64], fps: f64) -> Result<f64> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::InvalidParams(format!("fps must be positive, got {fps}")));
    }
    let required = (ORACLE_MIN_SECONDS * fps).ceil() as usize;
    if trace.len() < required {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            required,
        });
    }
    let min_len = (60.0 * fps / ORACLE_RESOLUTION_BPM).ceil() as usize;
    let n_fft = trace.len().max(min_len).next_power_of_two();

    let n = trace.len();
    let mean = trace.iter().sum::<f64>() / n as f64;
    let scale = trace.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if trace.iter().all(|x| (x - mean).abs() <= 1e-12 * scale) {
        return Err(Error::NoDominantPeak { peak: 0.0, median: 0.0 });
    }
    let mut buffer: Vec<Complex<f64>> = trace
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let taper = 0.5 - 0.5 * (TAU * i as f64 / (n - 1) as f64).cos();
            Complex::new((x - mean) * taper, 0.0)
        })
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buffer);

    let bin_hz = fps / n_fft as f64;
    let lo = ((HR_MIN_BPM / 60.0) / bin_hz).ceil() as usize;
    let hi = (((HR_MAX_BPM / 60.0) / bin_hz).floor() as usize).min(n_fft / 2);
    if hi <= lo {
        return Err(Error::InvalidParams(format!(
            "{fps} fps cannot represent the 40-160 bpm band"
        )));
    }
    let power: Vec<f64> = buffer[..=n_fft / 2].iter().map(|c| c.norm_sqr()).collect();
    let band = &power[lo..=hi];
    let (offset, &peak) = band
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("band is non-empty");
    let mut sorted = band.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(peak > 0.0 && peak >= 2.0 * median) {
        return Err(Error::NoDominantPeak { peak, median });
    }

    let k = lo + offset;
    let mut position = k as f64;
    if k > 0 && k + 1 < power.len() {
        let (left, right) = (power[k - 1], power[k + 1]);
        let curvature = left - 2.0 * peak + right;
        if curvature < 0.0 {
            position += (0.5 * (left - right) / curvature).clamp(-0.5, 0.5);
        }
    }
    Ok(60.0 * position * bin_hz)
}

/// [`hr_oracle_fft`] on the clip's spatially averaged green channel.
pub fn hr_oracle_clip(clip: &Clip) -> Result<f64> {
    hr_oracle_fft(&clip.mean_trace(), clip.fps)
}

/// Largest integer stride `S` with `fps / S > 2 * hr_max_bpm / 60`.
pub fn nyquist_max_stride(fps: f64, hr_max_bpm: f64) -> Result<usize> {
    if !(fps.is_finite() && fps > 0.0 && hr_max_bpm.is_finite() && hr_max_bpm > 0.0) {
        return Err(Error::InvalidParams(format!(
            "fps ({fps}) and hr_max_bpm ({hr_max_bpm}) must be positive"
        )));
    }
    let nyquist_rate = 2.0 * hr_max_bpm / 60.0;
    let mut stride = ((fps / nyquist_rate).ceil() as usize).saturating_sub(1);
    // Guard the float boundary in both directions.
    while stride > 0 && fps / stride as f64 <= nyquist_rate {
        stride -= 1;
    }
    while fps / (stride + 1) as f64 > nyquist_rate {
        stride += 1;
    }
    if stride == 0 {
        return Err(Error::NyquistUnsatisfiable { fps, hr_max_bpm });
    }
    Ok(stride)
}

/// Whether `stride` keeps the sampled rate above the Nyquist rate.
pub fn stride_is_nyquist_safe(fps: f64, hr_max_bpm: f64, stride: usize) -> bool {
    stride >= 1 && fps / stride as f64 > 2.0 * hr_max_bpm / 60.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sinusoid(freq_hz: f64, fps: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (TAU * freq_hz * i as f64 / fps).sin()).collect()
    }

    #[test]
    fn pure_tones() {
        let hr = hr_oracle_fft(&sinusoid(1.0, 30.0, 300), 30.0).unwrap();
        assert!((hr - 60.0).abs() <= ORACLE_RESOLUTION_BPM, "{hr}");
        let hr = hr_oracle_fft(&sinusoid(2.5, 30.0, 300), 30.0).unwrap();
        assert!((hr - 150.0).abs() <= ORACLE_RESOLUTION_BPM, "{hr}");
    }

    #[test]
    fn five_second_windows_across_the_band() {
        // Few cycles per window: the taper keeps the peak on target even at 40 bpm.
        let mut hr = 40.0;
        while hr <= 160.0 {
            let f = hr / 60.0;
            let trace: Vec<f64> = (0..150)
                .map(|i| {
                    let t = i as f64 / 30.0;
                    (TAU * f * t + 0.7).sin() + 0.3 * (2.0 * (TAU * f * t + 0.7)).sin()
                })
                .collect();
            let est = hr_oracle_fft(&trace, 30.0).unwrap();
            assert!((est - hr).abs() <= ORACLE_RESOLUTION_BPM, "{hr}: {est}");
            hr += 0.7;
        }
    }

    #[test]
    fn noisy_tone_monte_carlo() {
        // SNR 10 dB: noise variance = signal power / 10 = 0.5 / 10.
        let noise = Normal::new(0.0, (0.05f64).sqrt()).unwrap();
        let clean = sinusoid(1.2, 30.0, 450);
        let hits = (0..100)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let trace: Vec<f64> = clean.iter().map(|x| x + noise.sample(&mut rng)).collect();
                matches!(hr_oracle_fft(&trace, 30.0), Ok(hr) if (hr - 72.0).abs() <= 1.0)
            })
            .count();
        assert!(hits >= 95, "{hits}/100 within 1 bpm");
    }

    #[test]
    fn short_and_flat_traces_rejected() {
        assert!(matches!(
            hr_oracle_fft(&sinusoid(1.0, 30.0, 59), 30.0),
            Err(Error::TraceTooShort { len: 59, required: 60 })
        ));
        assert!(matches!(hr_oracle_fft(&[0.3; 120], 30.0), Err(Error::NoDominantPeak { .. })));
    }

    #[test]
    fn nyquist_strides() {
        assert_eq!(nyquist_max_stride(30.0, 160.0).unwrap(), 5);
        assert!(!stride_is_nyquist_safe(30.0, 160.0, 6));
        assert!(stride_is_nyquist_safe(30.0, 160.0, 5));
        // Exhaustive scan oracle for 61 fps.
        let scan = (1..100).filter(|&s| 61.0 / s as f64 > 160.0 / 30.0).max().unwrap();
        assert_eq!(scan, 11);
        assert_eq!(nyquist_max_stride(61.0, 160.0).unwrap(), 11);
        // Exact boundary: 32 fps / 6 = 5.333.. is not strictly above the Nyquist rate.
        assert_eq!(nyquist_max_stride(32.0, 160.0).unwrap(), 5);
        assert!(matches!(nyquist_max_stride(5.0, 160.0), Err(Error::NyquistUnsatisfiable { .. })));
    }
}
