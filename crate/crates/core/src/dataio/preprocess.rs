//! Frame-rate resampling, spatial resizing and fixed-length segmentation.

use ndarray::{s, Array2, Array4, ArrayView2};

use super::clip::Clip;
use crate::error::{Error, Result};

/// Frame indices selected when resampling `n_frames` from `fps` to
/// `target_fps` by nearest-frame selection.
pub fn resample_indices(n_frames: usize, fps: f64, target_fps: f64) -> Vec<usize> {
    let n_out = (n_frames as f64 * target_fps / fps).round() as usize;
    let ratio = fps / target_fps;
    (0..n_out)
        .map(|j| ((j as f64 * ratio).round() as usize).min(n_frames - 1))
        .collect()
}

/// Resamples a clip to `target_fps` by nearest-frame selection.
///
/// No temporal interpolation is performed, so every output frame is an exact
/// copy of an input frame.
pub fn resample_fps(clip: &Clip, target_fps: f64) -> Result<Clip> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(Error::InvalidClip(format!("target fps must be positive, got {target_fps}")));
    }
    clip.validate()?;
    if target_fps == clip.fps {
        return Ok(clip.clone());
    }
    let indices = resample_indices(clip.frames(), clip.fps, target_fps);
    if indices.len() < 2 {
        return Err(Error::ClipTooShort {
            frames: clip.frames(),
            reason: format!(
                "resampling {} fps -> {target_fps} fps leaves {} frame(s)",
                clip.fps,
                indices.len()
            ),
        });
    }
    Ok(clip.select_frames(&indices, target_fps))
}

/// Bilinear resize of one plane with half-pixel sample centres.
///
/// An integer 2x downscale averages 2x2 blocks exactly, and an equal-size
/// call returns the input unchanged.
pub fn resize_plane(src: ArrayView2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = src.dim();
    if in_h == out_h && in_w == out_w {
        return src.to_owned();
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = taps(in_h, out_h);
    let xs = taps(in_w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let (y0, y1, fy) = ys[oy];
        let (x0, x1, fx) = xs[ox];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Resizes every `(channel, frame)` plane of a `C x T x H x W` array.
pub fn resize_array(pixels: &Array4<f32>, out_h: usize, out_w: usize) -> Array4<f32> {
    let (c, t, h, w) = pixels.dim();
    if h == out_h && w == out_w {
        return pixels.clone();
    }
    let mut out = Array4::zeros((c, t, out_h, out_w));
    for ci in 0..c {
        for ti in 0..t {
            let plane = resize_plane(pixels.slice(s![ci, ti, .., ..]), out_h, out_w);
            out.slice_mut(s![ci, ti, .., ..]).assign(&plane);
        }
    }
    out
}

/// Resizes all frames to `size x size` with bilinear interpolation.
pub fn resize_frames(clip: &Clip, size: usize) -> Result<Clip> {
    if size < 8 {
        return Err(Error::InvalidClip(format!("resize target {size} below the 8-pixel minimum")));
    }
    Ok(Clip {
        pixels: resize_array(&clip.pixels, size, size),
        ..clip.clone()
    })
}

/// Start frames of the windows produced by [`segment_clips`].
pub fn segment_starts(n_frames: usize, clip_len: usize, overlap: usize) -> Result<Vec<usize>> {
    if clip_len == 0 || overlap >= clip_len {
        return Err(Error::InvalidClip(format!(
            "segment length {clip_len} with overlap {overlap} is not a forward window"
        )));
    }
    if clip_len > n_frames {
        return Err(Error::ClipTooShort {
            frames: n_frames,
            reason: format!("cannot cut {clip_len}-frame segments"),
        });
    }
    let step = clip_len - overlap;
    Ok((0..=(n_frames - clip_len) / step).map(|k| k * step).collect())
}

/// Splits a video into consecutive `clip_len`-frame windows that share
/// `overlap` frames; a trailing remainder is dropped.
///
/// Segment `k` gets video id `<video_id>_<k>` (zero-padded to 3 digits).
pub fn segment_clips(video: &Clip, clip_len: usize, overlap: usize) -> Result<Vec<Clip>> {
    let starts = segment_starts(video.frames(), clip_len, overlap)?;
    Ok(starts
        .iter()
        .enumerate()
        .map(|(k, &start)| Clip {
            pixels: video
                .pixels
                .slice(s![.., start..start + clip_len, .., ..])
                .to_owned(),
            fps: video.fps,
            subject_id: video.subject_id.clone(),
            video_id: format!("{}_{k:03}", video.video_id),
        })
        .collect())
}
