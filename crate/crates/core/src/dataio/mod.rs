//! Clips, landmarks and labels: preprocessing, subject-exclusive splitting
//! and the on-disk dataset layout.

mod clip;
mod preprocess;
mod split;
mod store;

pub use clip::{Clip, DatasetItem, HrLabel, LandmarkSet, Point, LANDMARK_COUNT};
pub use preprocess::{
    resample_fps, resample_indices, resize_array, resize_frames, resize_plane, segment_clips,
    segment_starts,
};
pub use split::{subject_exclusive_split, SplitSpec};
pub use store::{
    load_clip, load_dataset, read_labels, write_dataset, ClipMeta, FORMAT_VERSION, FRAMES_FILE,
    LABELS_FILE, LANDMARKS_FILE, META_FILE,
};
