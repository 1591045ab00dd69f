//! Landmark-based spatial views, stride-based temporal views and the
//! pseudo-labels that record which augmentation produced each view.

mod roi;
mod views;

pub use roi::{
    roi_layout, roi_mapping_table, FaceLayout, Rect, RoiId, RoiLayout, RoiRule, FACE_MARGIN,
    FOREHEAD_EXTENSION,
};
pub use views::{
    apply_augmentation, augment_pair, augment_view, random_start, roi_crop, sample_augmentation,
    temporal_subsample, AugmentConfig, AugmentDraw, AugmentedView, PseudoLabel, RoiCrop,
    HR_MAX_BPM,
};
