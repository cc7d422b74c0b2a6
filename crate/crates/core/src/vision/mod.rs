//! Feature front-end and two-view geometry used by the feature and pose
//! rewards.

mod homography;
mod matching;
mod orb;
mod pattern;
pub mod so3;
mod two_view;

use thiserror::Error;

pub use homography::{fit_homography, ransac_homography, ransac_homography_points, HomographyEstimate, RansacConfig};
pub use matching::{match_features, Match, RATIO};
pub use orb::{detect_features, detect_features_with, Descriptor, Features, Keypoint, OrbConfig};
pub use so3::{hat, vee, RigidPose, So3};
pub use two_view::{two_view_pose, two_view_pose_points, PoseEstimate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VisionError {
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("ambiguous motion: best hypothesis puts {positive} of {inliers} inliers in front of both cameras")]
    AmbiguousMotion { positive: usize, inliers: usize },
}
