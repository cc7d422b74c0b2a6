//! Per-step rewards: brightness statistics, feature counts and two-view
//! pose agreement with ground truth.

use thiserror::Error;

use crate::photometry::Image;
use crate::scene::Intrinsics;
use crate::vision::{
    detect_features, match_features, ransac_homography, two_view_pose, RansacConfig, RigidPose, So3,
};

/// Norm below which a translation has no usable direction.
const DEGENERATE_TRANSLATION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("frame sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_flk: f64,
    pub w_detect: f64,
    pub w_match: f64,
    pub w_rot: f64,
    pub w_trans: f64,
    pub rot_cap: f64,
    pub max_features: usize,
    /// Seed of the RANSAC samplers, fixed so rewards are reproducible.
    pub ransac_seed: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_flk: 0.2,
            w_detect: 0.005,
            w_match: 0.005,
            w_rot: 10.0,
            w_trans: 1.0,
            rot_cap: 1.0,
            max_features: 1000,
            ransac_seed: 0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let weights = [self.w_flk, self.w_detect, self.w_match, self.w_rot, self.w_trans];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(RewardError::Configuration("reward weights must be non-negative".into()));
        }
        if self.rot_cap != 1.0 {
            return Err(RewardError::Configuration(format!("rotation cap must be 1, got {}", self.rot_cap)));
        }
        if self.max_features == 0 {
            return Err(RewardError::Configuration("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything a reward may look at after one environment step.
pub struct StepContext<'a> {
    pub current: &'a Image,
    pub previous: &'a Image,
    /// Motion of the current camera in the frame of the previous one.
    pub gt_relative_pose: Option<RigidPose>,
    pub intrinsics: Intrinsics,
}

impl StepContext<'_> {
    fn check_sizes(&self) -> Result<(), RewardError> {
        let (a, b) = (self.current, self.previous);
        if a.width() != b.width() || a.height() != b.height() {
            return Err(RewardError::SizeMismatch(a.width(), a.height(), b.width(), b.height()));
        }
        Ok(())
    }
}

pub trait RewardFunction {
    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<f64, RewardError>;
}

/// Brightness term peaking at mid-grey, minus a flicker penalty.
pub fn reward_stat(ctx: &StepContext<'_>, config: &RewardConfig) -> f64 {
    let mu = ctx.current.mean();
    let mean_term = 1.0 - (mu / 255.0 - 0.5).abs() / 0.5;
    let flicker = (mu - ctx.previous.mean()).abs() / 255.0;
    mean_term - config.w_flk * flicker
}

/// Linear reward on the two feature counts.
pub fn feature_score(detected: usize, matched: usize, config: &RewardConfig) -> f64 {
    config.w_detect * detected as f64 + config.w_match * matched as f64
}

/// Detected and RANSAC-inlier matched ORB feature counts of a step.
pub fn feature_counts(ctx: &StepContext<'_>, config: &RewardConfig) -> (usize, usize) {
    let cur = detect_features(ctx.current, config.max_features);
    if cur.is_empty() {
        return (0, 0);
    }
    let prev = detect_features(ctx.previous, config.max_features);
    let matches = match_features(&prev, &cur);
    let ransac = RansacConfig { seed: config.ransac_seed, ..RansacConfig::default() };
    let inliers = ransac_homography(&matches, &prev.keypoints, &cur.keypoints, &ransac)
        .map(|h| h.inlier_count())
        .unwrap_or(0);
    (cur.len(), inliers)
}

pub fn reward_feat(ctx: &StepContext<'_>, config: &RewardConfig) -> f64 {
    let (detected, matched) = feature_counts(ctx, config);
    feature_score(detected, matched, config)
}

/// Relative rotation angle, capped.
pub fn rotation_error(estimate: &So3, truth: &So3, cap: f64) -> f64 {
    (estimate.inverse() * *truth).log().norm().min(cap)
}

/// Distance between the unit directions of two translations, in [0, 2].
pub fn translation_error(estimate: &nalgebra::Vector3<f64>, truth: &nalgebra::Vector3<f64>) -> f64 {
    let (ne, nt) = (estimate.norm(), truth.norm());
    match (ne <= DEGENERATE_TRANSLATION, nt <= DEGENERATE_TRANSLATION) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 2.0,
        (false, false) => (estimate / ne - truth / nt).norm(),
    }
}

/// Pose reward for an estimated motion against ground truth.
pub fn pose_score(estimate: &RigidPose, truth: &RigidPose, config: &RewardConfig) -> f64 {
    let rot = rotation_error(&estimate.rotation, &truth.rotation, config.rot_cap);
    let trans = translation_error(&estimate.translation, &truth.translation);
    -config.w_rot * rot - config.w_trans * trans
}

/// Worst attainable pose reward, given when two-view estimation fails.
pub fn pose_failure_score(config: &RewardConfig) -> f64 {
    -config.w_rot * config.rot_cap - config.w_trans * 2.0
}

pub fn reward_pose(ctx: &StepContext<'_>, config: &RewardConfig) -> Result<f64, RewardError> {
    let truth = ctx
        .gt_relative_pose
        .ok_or_else(|| RewardError::Configuration("pose reward needs ground-truth poses".into()))?;
    let prev = detect_features(ctx.previous, config.max_features);
    let cur = detect_features(ctx.current, config.max_features);
    let matches = match_features(&prev, &cur);
    let estimate = two_view_pose(&matches, &prev.keypoints, &cur.keypoints, &ctx.intrinsics, config.ransac_seed);
    Ok(match estimate {
        Ok(est) => pose_score(&RigidPose { rotation: est.rotation, translation: est.translation }, &truth, config),
        Err(_) => pose_failure_score(config),
    })
}

/// Which reward an experiment optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Stat,
    Feat,
    Pose,
}

impl std::str::FromStr for RewardKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stat" => Ok(Self::Stat),
            "feat" => Ok(Self::Feat),
            "pose" => Ok(Self::Pose),
            other => Err(format!("unknown reward '{other}', expected stat, feat or pose")),
        }
    }
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Stat => "stat",
            Self::Feat => "feat",
            Self::Pose => "pose",
        })
    }
}

/// A reward kind bound to its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Reward {
    pub kind: RewardKind,
    pub config: RewardConfig,
}

impl Reward {
    pub fn new(kind: RewardKind, config: RewardConfig) -> Result<Self, RewardError> {
        config.validate()?;
        Ok(Self { kind, config })
    }
}

impl RewardFunction for Reward {
    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<f64, RewardError> {
        ctx.check_sizes()?;
        match self.kind {
            RewardKind::Stat => Ok(reward_stat(ctx, &self.config)),
            RewardKind::Feat => Ok(reward_feat(ctx, &self.config)),
            RewardKind::Pose => reward_pose(ctx, &self.config),
        }
    }
}
