//! Synthetic facial video with a known heart rate.

use std::f64::consts::PI;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{DrmParams, PulseWaveform};
use crate::augment::{roi_layout, FaceLayout, RoiId};
use crate::dataio::{Clip, LandmarkSet, Point, LANDMARK_COUNT};
use crate::error::{Error, Result};

const JITTER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
/// Per-pixel pulse amplitude factor range.
pub const AMPLITUDE_JITTER: (f64, f64) = (0.9, 1.1);
/// Per-pixel pulse phase offset range in radians.
pub const PHASE_JITTER: (f64, f64) = (-0.05, 0.05);

/// The 68 template landmarks in unit face coordinates (x right, y down).
/// Jaw 1-17, brows 18-27, nose 28-36, eyes 37-48, mouth 49-68.
fn unit_template() -> [Point; LANDMARK_COUNT] {
    let mut pts = [[0.0; 2]; LANDMARK_COUNT];
    for (i, p) in pts.iter_mut().take(17).enumerate() {
        let phi = PI * i as f64 / 16.0;
        *p = [0.5 - 0.5 * phi.cos(), 0.25 + 0.75 * phi.sin()];
    }
    let rest: [Point; 51] = [
        // brows 18-27
        [0.12, 0.20], [0.19, 0.17], [0.27, 0.16], [0.35, 0.17], [0.42, 0.20],
        [0.58, 0.20], [0.65, 0.17], [0.73, 0.16], [0.81, 0.17], [0.88, 0.20],
        // nose bridge 28-31, nose bottom 32-36
        [0.50, 0.30], [0.50, 0.38], [0.50, 0.46], [0.50, 0.54],
        [0.40, 0.60], [0.45, 0.62], [0.50, 0.63], [0.55, 0.62], [0.60, 0.60],
        // left eye 37-42, right eye 43-48
        [0.18, 0.32], [0.24, 0.29], [0.31, 0.29], [0.37, 0.32], [0.31, 0.345], [0.24, 0.345],
        [0.63, 0.32], [0.69, 0.29], [0.76, 0.29], [0.82, 0.32], [0.76, 0.345], [0.69, 0.345],
        // outer mouth 49-60
        [0.35, 0.76], [0.40, 0.73], [0.46, 0.715], [0.50, 0.72], [0.54, 0.715], [0.60, 0.73],
        [0.65, 0.76], [0.60, 0.80], [0.55, 0.82], [0.50, 0.825], [0.45, 0.82], [0.40, 0.80],
        // inner mouth 61-68
        [0.38, 0.76], [0.45, 0.745], [0.50, 0.745], [0.55, 0.745], [0.62, 0.76], [0.55, 0.78],
        [0.50, 0.785], [0.45, 0.78],
    ];
    pts[17..].copy_from_slice(&rest);
    pts
}

/// Template landmarks for a face whose unit box is placed at `(x0, y0)`
/// with size `width x height`.
pub fn face_template(x0: f64, y0: f64, width: f64, height: f64) -> Vec<Point> {
    unit_template()
        .iter()
        .map(|&[u, v]| [x0 + u * width, y0 + v * height])
        .collect()
}

/// Template face centred in a square frame.
pub fn default_face(frame_size: usize) -> Vec<Point> {
    let s = frame_size as f64;
    let (w, h) = (0.6875 * s, 0.78 * s);
    face_template((s - w) / 2.0, 0.09 * s, w, h)
}

/// Randomly scaled, placed and jittered face that keeps every region inside
/// a `frame_size x frame_size` frame.
pub fn random_face<R: Rng + ?Sized>(frame_size: usize, rng: &mut R) -> Vec<Point> {
    let s = frame_size as f64;
    let w = s * rng.random_range(0.60..0.72);
    let h = w * rng.random_range(1.05..1.2);
    // Whole-face box spans [x0 - 0.05w, x0 + 1.05w] and [y0 - 0.008h, y0 + 1.042h].
    let x0 = rng.random_range(0.05 * w + 1.0..=s - 1.05 * w - 1.0);
    let y0 = rng.random_range(0.008 * h + 1.0..=s - 1.042 * h - 1.0);
    face_template(x0, y0, w, h)
        .into_iter()
        .map(|[x, y]| {
            [
                x + rng.random_range(-0.3..0.3),
                y + rng.random_range(-0.3..0.3),
            ]
        })
        .collect()
}

/// Smooth irradiance field multiplying all light reflected by the skin:
/// `1 + horizontal (u - 1/2) + vertical (v - 1/2) - radial ((u - 1/2)^2 + (v - 1/2)^2)`
/// with `(u, v)` the position inside the whole-face box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Shading {
    pub horizontal: f64,
    pub vertical: f64,
    pub radial: f64,
}

impl Shading {
    pub fn factor(&self, u: f64, v: f64) -> f64 {
        let (du, dv) = (u - 0.5, v - 0.5);
        1.0 + self.horizontal * du + self.vertical * dv - self.radial * (du * du + dv * dv)
    }

    pub fn is_flat(&self) -> bool {
        *self == Shading::default()
    }
}

/// Geometry and background of a synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub frame_size: usize,
    pub fps: f64,
    pub n_frames: usize,
    pub landmarks: Vec<Point>,
    pub face_layout: FaceLayout,
    pub background_level: [f64; 3],
    pub background_sigma: f64,
    pub shading: Shading,
    /// Draws eyes, brows and lips as non-pulsatile regions inside the face.
    #[serde(default)]
    pub facial_features: bool,
}

impl SyntheticScene {
    /// Scene whose face layout is derived from `landmarks`.
    pub fn new(frame_size: usize, fps: f64, n_frames: usize, landmarks: Vec<Point>) -> Result<Self> {
        let layout = roi_layout(&landmarks, frame_size, frame_size)?;
        if layout.clamped {
            return Err(Error::InvalidScene("face extends beyond the frame".into()));
        }
        let scene = Self {
            frame_size,
            fps,
            n_frames,
            landmarks,
            face_layout: layout.layout,
            background_level: [0.2, 0.2, 0.25],
            background_sigma: 0.01,
            shading: Shading::default(),
            facial_features: true,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// 64 x 64, 30 fps, 150 frames (5 s) with the centred template face.
    pub fn standard() -> Self {
        Self::new(64, 30.0, 150, default_face(64)).expect("template face fits the frame")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if self.frame_size < 8 || self.n_frames == 0 {
            return bad(format!("frame_size {} / n_frames {}", self.frame_size, self.n_frames));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.background_sigma >= 0.0) {
            return bad("background_sigma must be >= 0".into());
        }
        let corners = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (0.5, 0.5)];
        if corners.iter().any(|&(u, v)| self.shading.factor(u, v) <= 0.0) {
            return bad(format!("shading {:?} is not positive over the face", self.shading));
        }
        if !self.face_layout.is_nested(self.frame_size, self.frame_size) {
            return bad("regions are not nested inside the whole face and frame".into());
        }
        let derived = roi_layout(&self.landmarks, self.frame_size, self.frame_size)?;
        if derived.layout != self.face_layout {
            return bad("face layout does not match the landmark mapping".into());
        }
        Ok(())
    }
}

/// A generated clip with its landmarks and ground-truth heart rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub clip: Clip,
    pub landmarks: LandmarkSet,
    pub hr_bpm: f64,
}

const EYE_COLOUR: [f64; 3] = [0.12, 0.10, 0.10];
const BROW_COLOUR: [f64; 3] = [0.18, 0.13, 0.10];
const LIP_COLOUR: [f64; 3] = [0.50, 0.22, 0.24];
/// Half thickness of a brow stroke in pixels.
const BROW_HALF_WIDTH: f64 = 0.75;

fn inside_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn near_polyline(p: Point, line: &[Point], radius: f64) -> bool {
    line.windows(2).any(|w| {
        let (a, b) = (w[0], w[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (dx, dy) = (p[0] - a[0] - t * d[0], p[1] - a[1] - t * d[1]);
        dx * dx + dy * dy <= radius * radius
    })
}

/// Jaw line (points 1-17) closed by verticals up to the top of the face box.
fn face_outline(landmarks: &[Point], top: f64) -> Vec<Point> {
    let mut outline = landmarks[..17].to_vec();
    outline.push([landmarks[16][0], top]);
    outline.push([landmarks[0][0], top]);
    outline
}

/// Colour of the non-skin facial feature covering pixel `(x, y)`, if any.
fn feature_colour(landmarks: &[Point], x: usize, y: usize) -> Option<[f64; 3]> {
    let p = [x as f64 + 0.5, y as f64 + 0.5];
    let span = |a: usize, b: usize| &landmarks[a - 1..b];
    if inside_polygon(p, span(37, 42)) || inside_polygon(p, span(43, 48)) {
        Some(EYE_COLOUR)
    } else if inside_polygon(p, span(49, 60)) {
        Some(LIP_COLOUR)
    } else if near_polyline(p, span(18, 22), BROW_HALF_WIDTH) || near_polyline(p, span(23, 27), BROW_HALF_WIDTH) {
        Some(BROW_COLOUR)
    } else {
        None
    }
}

/// Renders a scene: skin pixels (inside the jaw line when facial features
/// are drawn, else the whole-face box) follow the
/// reflection model with small per-pixel pulse amplitude/phase jitter, eyes,
/// brows and lips reflect the light without a pulse, all other pixels are
/// background noise. Values are clamped to `[0, 1]`.
pub fn generate_synthetic_video(scene: &SyntheticScene, params: &DrmParams, pulse: &PulseWaveform) -> Result<SyntheticVideo> {
    scene.validate()?;
    params.validate()?;
    pulse.validate()?;

    let size = scene.frame_size;
    let face = scene.face_layout.get(RoiId::WholeFace);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(params.seed);
    jitter_rng.set_stream(JITTER_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(params.seed);
    noise_rng.set_stream(NOISE_STREAM);

    struct SkinPixel {
        y: usize,
        x: usize,
        amplitude: f64,
        phase: f64,
        shade: f64,
        feature: Option<[f64; 3]>,
    }
    let outline = face_outline(&scene.landmarks, face.y0 as f64);
    let mut is_skin = vec![false; size * size];
    let mut skin = Vec::with_capacity(face.area());
    for y in face.y0..face.y1 {
        for x in face.x0..face.x1 {
            if scene.facial_features && !inside_polygon([x as f64 + 0.5, y as f64 + 0.5], &outline) {
                continue;
            }
            is_skin[y * size + x] = true;
            let u = (x - face.x0) as f64 / (face.width() - 1).max(1) as f64;
            let v = (y - face.y0) as f64 / (face.height() - 1).max(1) as f64;
            skin.push(SkinPixel {
                y,
                x,
                amplitude: jitter_rng.random_range(AMPLITUDE_JITTER.0..AMPLITUDE_JITTER.1),
                phase: jitter_rng.random_range(PHASE_JITTER.0..PHASE_JITTER.1),
                shade: scene.shading.factor(u, v),
                feature: if scene.facial_features {
                    feature_colour(&scene.landmarks, x, y)
                } else {
                    None
                },
            });
        }
    }

    let mut pixels = Array4::<f32>::zeros((3, scene.n_frames, size, size));
    let mut noise = |sigma: f64| -> f64 {
        if sigma > 0.0 {
            sigma * noise_rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    };
    for f in 0..scene.n_frames {
        let t = f as f64 / scene.fps;
        for y in 0..size {
            for x in 0..size {
                if is_skin[y * size + x] {
                    continue;
                }
                for c in 0..3 {
                    let v = scene.background_level[c] + noise(scene.background_sigma);
                    pixels[[c, f, y, x]] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        let light = params.intensity.at(t);
        for px in &skin {
            let rgb = match px.feature {
                Some(colour) => colour.map(|c| light * px.shade * c),
                None => params.colour_at(t, px.amplitude * pulse.shifted(t, px.phase), px.shade),
            };
            for c in 0..3 {
                let v = rgb[c] + noise(params.noise_sigma);
                pixels[[c, f, px.y, px.x]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }

    Ok(SyntheticVideo {
        clip: Clip::new(pixels, scene.fps, "synthetic", "synthetic")?,
        landmarks: LandmarkSet::fixed(scene.landmarks.clone()),
        hr_bpm: pulse.hr_bpm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::roi_layout;
    use crate::signal::{hr_oracle_clip, PulseShape};

    #[test]
    fn standard_scene_shape_and_duration() {
        let scene = SyntheticScene::standard();
        assert_eq!(scene.n_frames as f64 / scene.fps, 5.0);
        let video = generate_synthetic_video(&scene, &DrmParams::default(), &PulseWaveform::sinusoid(72.0).unwrap()).unwrap();
        assert_eq!(video.clip.pixels.dim(), (3, 150, 64, 64));
        assert_eq!(video.hr_bpm, 72.0);
        let layout = roi_layout(video.landmarks.frame(0), 64, 64).unwrap().layout;
        assert_eq!(layout, scene.face_layout);
    }

    #[test]
    fn noiseless_face_recovers_heart_rate() {
        let scene = SyntheticScene::standard();
        let pulse = PulseWaveform::new(72.0, PulseShape::SinusoidPlusHarmonic, 0.3).unwrap();
        let video = generate_synthetic_video(&scene, &DrmParams::default(), &pulse).unwrap();
        let face = crate::augment::roi_crop(&video.clip, &video.landmarks, RoiId::WholeFace, 64).unwrap();
        let hr = hr_oracle_clip(&face.clip).unwrap();
        assert!((hr - 72.0).abs() <= 0.5, "{hr}");
    }

    #[test]
    fn same_seed_same_pixels() {
        let scene = SyntheticScene::standard();
        let params = DrmParams {
            noise_sigma: 0.02,
            seed: 9,
            ..DrmParams::default()
        };
        let pulse = PulseWaveform::sinusoid(100.0).unwrap();
        let a = generate_synthetic_video(&scene, &params, &pulse).unwrap();
        let b = generate_synthetic_video(&scene, &params, &pulse).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_video(&scene, &DrmParams { seed: 10, ..params }, &pulse).unwrap();
        assert_ne!(a.clip.pixels, c.clip.pixels);
    }

    #[test]
    fn pixels_follow_the_model() {
        let scene = SyntheticScene::standard();
        let params = DrmParams::default();
        let pulse = PulseWaveform::sinusoid(90.0).unwrap();
        let video = generate_synthetic_video(&scene, &params, &pulse).unwrap();
        let face = scene.face_layout.get(RoiId::WholeFace);
        let (y, x) = (face.y0 + 5, face.x0 + 7);
        for f in [0, 17, 149] {
            let t = f as f64 / 30.0;
            // Any admissible jitter keeps the pixel within this envelope of the nominal trace.
            let nominal = params.noiseless_at(t, pulse.at(t));
            for c in 0..3 {
                let v = video.clip.pixels[[c, f, y, x]] as f64;
                let slack = params.u_p[c] * (0.1 + 1.1 * 0.05) + 1e-6;
                assert!((v - nominal[c]).abs() <= slack, "frame {f} channel {c}");
            }
        }
        // Background keeps the configured level on average.
        let bg: f64 = (0..150).map(|f| video.clip.pixels[[2, f, 0, 0]] as f64).sum::<f64>() / 150.0;
        assert!((bg - 0.25).abs() < 0.01);
    }

    #[test]
    fn mismatched_layout_rejected() {
        let mut scene = SyntheticScene::standard();
        scene.face_layout.rects[RoiId::Chin as usize].y1 += 20;
        assert!(matches!(
            generate_synthetic_video(&scene, &DrmParams::default(), &PulseWaveform::sinusoid(72.0).unwrap()),
            Err(Error::InvalidScene(_))
        ));
    }

    #[test]
    fn random_faces_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let face = random_face(64, &mut rng);
            let scene = SyntheticScene::new(64, 30.0, 10, face).unwrap();
            assert!(scene.face_layout.is_nested(64, 64));
        }
    }

    #[test]
    fn polygon_and_polyline_membership() {
        let square = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        assert!(inside_polygon([2.0, 2.0], &square));
        assert!(!inside_polygon([4.5, 2.0], &square));
        assert!(!inside_polygon([2.0, -0.1], &square));
        let line = [[0.0, 0.0], [10.0, 0.0]];
        assert!(near_polyline([5.0, 0.7], &line, 0.75));
        assert!(!near_polyline([5.0, 0.8], &line, 0.75));
        // Past the end the distance is to the endpoint.
        assert!(!near_polyline([10.6, 0.6], &line, 0.75));
    }

    #[test]
    fn features_are_static_and_the_jaw_bounds_the_skin() {
        let scene = SyntheticScene::standard();
        assert!(scene.facial_features);
        let params = DrmParams::default();
        let video = generate_synthetic_video(&scene, &params, &PulseWaveform::sinusoid(75.0).unwrap()).unwrap();
        let pixel = |x: usize, y: usize, f: usize| [0, 1, 2].map(|c| video.clip.pixels[[c, f, y, x]]);
        let lm = &scene.landmarks;
        let centroid = |a: usize, b: usize| {
            let pts = &lm[a - 1..b];
            let n = pts.len() as f64;
            [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n]
        };
        for (a, b, colour) in [(37, 42, EYE_COLOUR), (43, 48, EYE_COLOUR), (49, 60, LIP_COLOUR)] {
            let [cx, cy] = centroid(a, b);
            let (x, y) = (cx as usize, cy as usize);
            assert_eq!(feature_colour(lm, x, y), Some(colour), "landmarks {a}-{b}");
            // No pulse and no noise: every frame is identical.
            assert!((0..scene.n_frames).all(|f| pixel(x, y, f) == pixel(x, y, 0)));
        }
        let face = scene.face_layout.get(RoiId::WholeFace);
        let outline = face_outline(lm, face.y0 as f64);
        let (mut outside, mut inside) = (0, 0);
        for y in face.y0..face.y1 {
            for x in face.x0..face.x1 {
                if inside_polygon([x as f64 + 0.5, y as f64 + 0.5], &outline) {
                    inside += 1;
                } else {
                    outside += 1;
                    let level = scene.background_level.map(|v| v as f32);
                    assert!(pixel(x, y, 0).iter().zip(level).all(|(p, l)| (p - l).abs() < 0.06));
                }
            }
        }
        assert!(outside > 0 && inside > outside);
    }

    #[test]
    fn without_features_the_whole_box_pulses() {
        let mut scene = SyntheticScene::standard();
        scene.facial_features = false;
        let video = generate_synthetic_video(&scene, &DrmParams::default(), &PulseWaveform::sinusoid(75.0).unwrap()).unwrap();
        let face = scene.face_layout.get(RoiId::WholeFace);
        for (x, y) in [(face.x0, face.y1 - 1), (face.x1 - 1, face.y1 - 1)] {
            let g: Vec<f32> = (0..scene.n_frames).map(|f| video.clip.pixels[[1, f, y, x]]).collect();
            let spread = g.iter().fold(f32::MIN, |m, v| m.max(*v)) - g.iter().fold(f32::MAX, |m, v| m.min(*v));
            assert!(spread > 0.01, "corner ({x}, {y}) is static");
        }
    }
}
