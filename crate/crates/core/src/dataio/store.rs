//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   labels.csv                    subject_id,clip_id,hr_bpm
//!   <subject>/<clip>/frames.bin   little-endian f32, C-order C x T x H x W
//!   <subject>/<clip>/meta.json    {"format_version", "subject_id", "clip_id", "fps", "channels", "frames", "height", "width"}
//!   <subject>/<clip>/landmarks.json  {"points": [[[x, y] x 68] x (1 | T)]}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::clip::{Clip, DatasetItem, HrLabel, LandmarkSet};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const LABELS_FILE: &str = "labels.csv";
pub const FRAMES_FILE: &str = "frames.bin";
pub const META_FILE: &str = "meta.json";
pub const LANDMARKS_FILE: &str = "landmarks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub format_version: u32,
    pub subject_id: String,
    pub clip_id: String,
    pub fps: f64,
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    subject_id: String,
    clip_id: String,
    hr_bpm: f64,
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.contains(['/', '\\', ','])
        && !id.chars().any(char::is_control);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidLabel(format!("{kind} id {id:?} is not usable as a directory name")))
    }
}

/// Writes `items` under `root`, creating directories as needed.
pub fn write_dataset(items: &[DatasetItem], root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut seen = BTreeSet::new();
    for item in items {
        let clip = &item.clip;
        clip.validate()?;
        item.label.validate()?;
        check_id("subject", &item.label.subject_id)?;
        check_id("clip", &item.label.clip_id)?;
        if !seen.insert((item.label.subject_id.clone(), item.label.clip_id.clone())) {
            return Err(Error::InvalidLabel(format!(
                "duplicate clip {}/{}",
                item.label.subject_id, item.label.clip_id
            )));
        }
        item.landmarks
            .validate(clip.frames(), clip.height(), clip.width())?;

        let dir = root.join(&item.label.subject_id).join(&item.label.clip_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let (c, t, h, w) = clip.pixels.dim();
        let meta = ClipMeta {
            format_version: FORMAT_VERSION,
            subject_id: item.label.subject_id.clone(),
            clip_id: item.label.clip_id.clone(),
            fps: clip.fps,
            channels: c,
            frames: t,
            height: h,
            width: w,
        };
        let meta_path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

        let mut bytes = Vec::with_capacity(clip.pixels.len() * 4);
        // Iteration follows logical C-order regardless of memory layout.
        for v in clip.pixels.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let frames_path = dir.join(FRAMES_FILE);
        fs::write(&frames_path, bytes).map_err(|e| Error::io(&frames_path, e))?;

        let lm_path = dir.join(LANDMARKS_FILE);
        let text = serde_json::to_string(&item.landmarks).map_err(|e| Error::json(&lm_path, e))?;
        fs::write(&lm_path, text).map_err(|e| Error::io(&lm_path, e))?;
    }

    let labels_path = root.join(LABELS_FILE);
    let mut writer = csv::Writer::from_path(&labels_path).map_err(|e| Error::csv(&labels_path, e))?;
    for item in items {
        writer
            .serialize(LabelRow {
                subject_id: item.label.subject_id.clone(),
                clip_id: item.label.clip_id.clone(),
                hr_bpm: item.label.hr_bpm,
            })
            .map_err(|e| Error::csv(&labels_path, e))?;
    }
    writer.flush().map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

/// Reads `labels.csv` under `root`.
pub fn read_labels(root: &Path) -> Result<Vec<HrLabel>> {
    let path = root.join(LABELS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(&path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "clip_id", "hr_bpm"] {
        return Err(Error::InvalidLabel(format!(
            "{}: header must be subject_id,clip_id,hr_bpm",
            path.display()
        )));
    }
    let mut labels = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::csv(&path, e))?;
        labels.push(HrLabel::new(row.subject_id, row.clip_id, row.hr_bpm)?);
    }
    Ok(labels)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Loads one clip directory.
pub fn load_clip(root: &Path, subject: &str, clip_id: &str) -> Result<(Clip, LandmarkSet)> {
    let dir = root.join(subject).join(clip_id);
    let name = format!("{subject}/{clip_id}");
    let invalid = |reason: String| Error::InvalidMetadata {
        clip: name.clone(),
        reason,
    };

    let meta_path = dir.join(META_FILE);
    if !meta_path.is_file() {
        return Err(Error::MissingMeta(meta_path));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ClipMeta = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(invalid(format!("unsupported format_version {}", meta.format_version)));
    }
    if !(meta.fps.is_finite() && meta.fps > 0.0) {
        return Err(invalid(format!("fps must be positive, got {}", meta.fps)));
    }
    if meta.channels != 3 || meta.frames == 0 || meta.height == 0 || meta.width == 0 {
        return Err(invalid(format!(
            "bad dimensions {}x{}x{}x{}",
            meta.channels, meta.frames, meta.height, meta.width
        )));
    }
    if meta.subject_id != subject || meta.clip_id != clip_id {
        return Err(invalid(format!(
            "meta names {}/{} but lives in {name}",
            meta.subject_id, meta.clip_id
        )));
    }

    let frames_path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&frames_path).map_err(|e| Error::io(&frames_path, e))?;
    let shape = (meta.channels, meta.frames, meta.height, meta.width);
    let expected = shape.0 * shape.1 * shape.2 * shape.3 * 4;
    if bytes.len() != expected {
        return Err(invalid(format!(
            "{FRAMES_FILE} holds {} bytes, dimensions require {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let pixels = Array4::from_shape_vec(shape, values).expect("length checked above");

    let lm_path = dir.join(LANDMARKS_FILE);
    let text = fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
    let landmarks: LandmarkSet = serde_json::from_str(&text).map_err(|e| Error::json(&lm_path, e))?;
    if !(landmarks.is_static() || landmarks.points.len() == meta.frames) {
        return Err(Error::LandmarkFrameMismatch {
            clip: name,
            landmark_frames: landmarks.points.len(),
            frames: meta.frames,
        });
    }
    landmarks.validate(meta.frames, meta.height, meta.width)?;

    let clip = Clip::new(pixels, meta.fps, subject, clip_id)?;
    Ok((clip, landmarks))
}

/// Loads every clip under `root`, ordered by `(subject, clip)`.
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetItem>> {
    let labels = read_labels(root)?;
    let mut by_key: BTreeMap<(String, String), HrLabel> = BTreeMap::new();
    for label in labels {
        by_key.insert((label.subject_id.clone(), label.clip_id.clone()), label);
    }

    let mut on_disk = BTreeSet::new();
    for subject in sorted_subdirs(root)? {
        for clip_id in sorted_subdirs(&root.join(&subject))? {
            on_disk.insert((subject.clone(), clip_id));
        }
    }
    if let Some((subject, clip)) = by_key.keys().find(|k| !on_disk.contains(*k)) {
        return Err(Error::UnknownLabelClip {
            subject: subject.clone(),
            clip: clip.clone(),
        });
    }

    let mut items = Vec::with_capacity(on_disk.len());
    for (subject, clip_id) in on_disk {
        let (clip, landmarks) = load_clip(root, &subject, &clip_id)?;
        let label = by_key
            .remove(&(subject.clone(), clip_id.clone()))
            .ok_or(Error::MissingLabel {
                subject,
                clip: clip_id,
            })?;
        items.push(DatasetItem {
            clip,
            landmarks,
            label,
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::LANDMARK_COUNT;

    fn item(subject: &str, clip: &str, frames: usize, hr: f64) -> DatasetItem {
        let pixels = Array4::from_shape_fn((3, frames, 4, 5), |(c, t, y, x)| {
            (c * 1000 + t * 100 + y * 10 + x) as f32 / 7919.0
        });
        DatasetItem {
            clip: Clip::new(pixels, 29.97, subject, clip).unwrap(),
            landmarks: LandmarkSet::fixed(vec![[1.25, 2.5]; LANDMARK_COUNT]),
            label: HrLabel::new(subject, clip, hr).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![item("a", "c0", 3, 61.5), item("a", "c1", 2, 90.125), item("b", "c0", 4, 1.0 / 3.0)];
        write_dataset(&items, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, items);
    }

    #[test]
    fn zero_fps_meta_names_the_clip() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[item("a", "c0", 2, 70.0)], dir.path()).unwrap();
        let meta_path = dir.path().join("a/c0/meta.json");
        let text = fs::read_to_string(&meta_path).unwrap().replace("29.97", "0.0");
        fs::write(&meta_path, text).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::InvalidMetadata { clip, .. }) => assert_eq!(clip, "a/c0"),
            other => panic!("expected invalid metadata, got {other:?}"),
        }
    }

    #[test]
    fn distinct_errors_for_distinct_corruptions() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[item("a", "c0", 2, 70.0)], dir.path()).unwrap();
        fs::remove_file(dir.path().join("a/c0/meta.json")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingMeta(_))));

        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[item("a", "c0", 2, 70.0)], dir.path()).unwrap();
        let three = LandmarkSet::per_frame(vec![vec![[1.0, 1.0]; LANDMARK_COUNT]; 3]);
        fs::write(dir.path().join("a/c0/landmarks.json"), serde_json::to_string(&three).unwrap()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::LandmarkFrameMismatch { .. })));

        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[item("a", "c0", 2, 70.0)], dir.path()).unwrap();
        let mut labels = fs::read_to_string(dir.path().join(LABELS_FILE)).unwrap();
        labels.push_str("ghost,c9,80\n");
        fs::write(dir.path().join(LABELS_FILE), labels).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::UnknownLabelClip { .. })));

        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[item("a", "c0", 2, 70.0), item("a", "c1", 2, 70.0)], dir.path()).unwrap();
        fs::write(dir.path().join(LABELS_FILE), "subject_id,clip_id,hr_bpm\na,c0,70\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingLabel { .. })));
    }

    #[test]
    fn labels_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[item("a", "c0", 2, 72.5)], dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(LABELS_FILE)).unwrap();
        assert_eq!(text, "subject_id,clip_id,hr_bpm\na,c0,72.5\n");
    }
}
