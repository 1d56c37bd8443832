//! Viola-Jones style detection: integral images, boosted stump cascades,
//! multi-scale search with rectangle grouping, and mouth extraction from a
//! detected face.

mod cascade;
mod detect;
pub mod fixtures;
mod integral;
mod xml;

pub use cascade::{Cascade, CascadeStage, HaarFeature, HaarRect, Stump, MIN_BASE_SIZE};
pub use detect::{
    detect_multiscale, detect_multiscale_integral, extract_mouth_roi, fallback_mouth_rect,
    group_rectangles, lower_face_half, pick_best, DetectParams, DetectionBox, MouthRoi, RoiSource,
    DEFAULT_GROUP_EPS, DEFAULT_MIN_NEIGHBORS, DEFAULT_SCALE_FACTOR,
};
pub use integral::{IntegralImage, Rect};
pub use xml::{export_cascade, import_cascade, load_cascade};
