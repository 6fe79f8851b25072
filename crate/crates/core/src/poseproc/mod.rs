//! Assessment preprocessing: keypoints, temporal ROI, spine-scaled hand box
//! and the 32x32 colour clip fed to the network.

pub mod clip;
pub mod geometry;
pub mod keypoints;

pub use clip::{extract_clip, ClipTensor, Frame, FrameSource, ImageDirSource, CLIP_SIDE};
pub use geometry::{
    derived_points, hand_bounding_box, keypoint_coverage, locate_hand, mean_spine_length, BoundingBox,
    ClipCoverage, TemporalRoi, BOX_SIDE_PER_SPINE, MIN_CLIP_COVERAGE, TORSO_KEYPOINTS,
};
pub use keypoints::{Keypoint, KeypointName, Laterality, Point, PoseFrame, PoseSequence, MIN_CONFIDENCE};

use crate::error::Result;
use crate::scalar::Scalar;

/// Full pixel-branch preprocessing of one assessment.
pub fn preprocess<T: Scalar>(
    seq: &PoseSequence,
    video: &dyn FrameSource,
    roi: TemporalRoi,
) -> Result<ClipTensor<T>> {
    let bbox = locate_hand(seq, roi)?;
    extract_clip(video, roi, bbox, seq.fps)
}
