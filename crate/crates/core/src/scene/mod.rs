//! Bracketed sequences and the simulator built on top of them.
//!
//! A sequence stores, for every frame, five captures of the same instant
//! at a fixed exposure ladder. Any other exposure is re-synthesised from
//! the bracket member just below it, which is what lets an agent interact
//! with recorded data offline.

mod augment;
mod env;
mod generate;
pub mod io;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::photometry::{synthesize, CameraResponse, Image, PhotometryError};
use crate::rewards::RewardError;
use crate::vision::{RigidPose, So3};

pub use augment::{enumerate_augmentations, AugmentationSpec};
pub use env::{area_resize, EnvConfig, ExposureEnv, Observation, StepOutcome, OBS_FRAMES, OBS_SIZE};
pub use generate::{
    capture_bracket, generate_panorama, generate_sequence, render_frame, LightEvent, PathPoint, RenderParams,
    SceneSpec, FRAME_HEIGHT, FRAME_WIDTH,
};

/// Exposure times of the five bracket slots, in microseconds.
pub const BRACKET_LADDER_US: [f64; 5] = [50.0, 200.0, 1000.0, 5000.0, 20000.0];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Photometry(#[from] PhotometryError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid scene: {0}")]
    Domain(String),
    #[error("cursor {cursor} is past the end of the augmented sequence ({len} frames)")]
    EndOfSequence { cursor: usize, len: usize },
    #[error("environment protocol violation: {0}")]
    Protocol(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("{path}: {message}")]
    Load { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SceneError>;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Default camera of the synthetic scenes. The principal point sits at
    /// the exact image centre so that flips keep the intrinsics unchanged.
    pub fn synthetic() -> Self {
        Self {
            fx: 400.0,
            fy: 400.0,
            cx: (FRAME_WIDTH as f64 - 1.0) / 2.0,
            cy: (FRAME_HEIGHT as f64 - 1.0) / 2.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Five registered captures of one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketedFrame {
    images: Vec<Image>,
    pub timestamp: f64,
}

impl BracketedFrame {
    pub fn new(images: Vec<Image>, timestamp: f64) -> Result<Self> {
        if images.len() != BRACKET_LADDER_US.len() {
            return Err(SceneError::Domain(format!(
                "a bracket holds {} images, expected {}",
                images.len(),
                BRACKET_LADDER_US.len()
            )));
        }
        for (img, &t) in images.iter().zip(&BRACKET_LADDER_US) {
            if img.exposure.time_us != t || img.exposure.gain_db != 0.0 {
                return Err(SceneError::Domain(format!(
                    "bracket slot exposure {:?} does not match the ladder value {t} us",
                    img.exposure
                )));
            }
            if img.width() != images[0].width() || img.height() != images[0].height() {
                return Err(SceneError::Domain("bracket images differ in size".into()));
            }
        }
        Ok(Self { images, timestamp })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }
}

/// The bracket image with the largest exposure not above `target_us`, or the
/// shortest one when the target lies below the whole ladder.
pub fn select_seed(frame: &BracketedFrame, target_us: f64) -> &Image {
    let slot = BRACKET_LADDER_US.iter().rposition(|&t| t <= target_us).unwrap_or(0);
    &frame.images[slot]
}

/// Synthesises the frame at `target_us` from its best seed.
pub fn render_from_bracket(
    frame: &BracketedFrame,
    target_us: f64,
    response: &CameraResponse,
) -> Result<Image> {
    Ok(synthesize(select_seed(frame, target_us), target_us, response)?)
}

/// Replayable capture sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketedSequence {
    frames: Vec<BracketedFrame>,
    pub response: CameraResponse,
    pub intrinsics: Intrinsics,
    gt_poses: Option<Vec<RigidPose>>,
    pub fps: f64,
}

impl BracketedSequence {
    pub fn new(
        frames: Vec<BracketedFrame>,
        response: CameraResponse,
        intrinsics: Intrinsics,
        gt_poses: Option<Vec<RigidPose>>,
        fps: f64,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(SceneError::Domain(format!(
                "a sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if let Some(poses) = &gt_poses {
            if poses.len() != frames.len() {
                return Err(SceneError::Domain(format!(
                    "{} ground-truth poses for {} frames",
                    poses.len(),
                    frames.len()
                )));
            }
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        if frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(SceneError::Domain("frames differ in size".into()));
        }
        Ok(Self { frames, response, intrinsics, gt_poses, fps })
    }

    pub fn frames(&self) -> &[BracketedFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn gt_poses(&self) -> Option<&[RigidPose]> {
        self.gt_poses.as_deref()
    }

    /// Ground-truth motion from source frame `from` to source frame `to`,
    /// i.e. the pose of camera `to` in the frame of camera `from`.
    pub fn relative_pose(&self, from: usize, to: usize) -> Option<RigidPose> {
        let poses = self.gt_poses.as_ref()?;
        Some(poses[from].relative_to(&poses[to]))
    }
}

/// Renders augmented frame `cursor` at `target_us`.
pub fn observe_at(
    sequence: &BracketedSequence,
    augmentation: &AugmentationSpec,
    cursor: usize,
    target_us: f64,
) -> Result<Image> {
    let len = augmentation.augmented_len(sequence.len());
    let source = augmentation
        .source_index(cursor, sequence.len())
        .ok_or(SceneError::EndOfSequence { cursor, len })?;
    let mut img = render_from_bracket(&sequence.frames[source], target_us, &sequence.response)?;
    if augmentation.flip_h {
        img.flip_horizontal();
    }
    if augmentation.flip_v {
        img.flip_vertical();
    }
    Ok(img)
}

/// Conjugates a relative camera motion by the image flips of `augmentation`.
/// Mirroring the image about its centre mirrors the world about the
/// corresponding camera axis.
pub fn flip_relative_pose(pose: &RigidPose, augmentation: &AugmentationSpec) -> RigidPose {
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if augmentation.flip_h {
        d.x = -1.0;
    }
    if augmentation.flip_v {
        d.y = -1.0;
    }
    let f = Matrix3::from_diagonal(&d);
    RigidPose {
        rotation: So3::from_matrix_projected(&(f * pose.rotation.matrix() * f)),
        translation: f * pose.translation,
    }
}
