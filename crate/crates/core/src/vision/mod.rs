//! Stack and footprint detection, patch candidates, scoring and tracking,
//! and metric pose recovery from image endpoints.

pub mod components;
pub mod detect;
pub mod hull;
pub mod pose;
pub mod tracker;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use components::{connected_components, connected_components_mask, Region};
pub use detect::{detect_footprint, detect_stacks, extract_patch_candidates, extract_patch_candidates_rectified, score, DetectConfig, PatchCandidate, StackObservation};
pub use hull::{convex_hull, min_area_rect, RotatedRect};
pub use pose::{estimate_footprint_pose, estimate_patch_pose, to_map_frame, FootprintEstimate, PatchEstimate};
pub use tracker::{track_and_select, ScoringWeights, TrackerConfig, TrackerState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("hull is degenerate")]
    DegenerateHull,
    #[error("target not visible")]
    NotVisible,
    #[error("no depth returns in the candidate region")]
    NoDepth,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
