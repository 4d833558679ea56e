//! KITTI-style metrics: rotated BEV IoU, 3D IoU and 40-point AP.

pub mod ap;
pub mod iou;

pub use ap::{
    average_precision, bucket_difficulty, evaluate_images, match_image, ApResult, Difficulty, DifficultyConfig,
    GroundTruth, ImageMatch, IouMetric, MatchedRecord, ScoredBox,
};
pub use iou::{bev_iou, clip_convex, convex_intersection_area, iou3d, polygon_area};
