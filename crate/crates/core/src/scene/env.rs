//! Episodic exposure-control environment over a bracketed sequence.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    enumerate_augmentations, flip_relative_pose, observe_at, AugmentationSpec, BracketedSequence,
    Result, SceneError,
};
use crate::photometry::{apply_ev_delta, Image, MAX_EV_STEP};
use crate::rewards::{RewardFunction, StepContext};

/// Frames stacked in one observation.
pub const OBS_FRAMES: usize = 4;
/// Side of the square observation planes.
pub const OBS_SIZE: usize = 84;
const PLANE_LEN: usize = OBS_SIZE * OBS_SIZE;

/// Area-averaging downscale to `out_w`×`out_h`. Each output pixel is the
/// mean of the source area it covers, with fractional edge weights.
pub fn area_resize(img: &Image, out_w: usize, out_h: usize) -> Vec<u8> {
    let cols = area_weights(img.width(), out_w);
    let rows = area_weights(img.height(), out_h);
    let src = img.data();
    let w = img.width();
    let mut out = Vec::with_capacity(out_w * out_h);
    for row in &rows {
        for col in &cols {
            let mut acc = 0.0;
            let mut total = 0.0;
            for &(y, wy) in row {
                let line = &src[y * w..(y + 1) * w];
                for &(x, wx) in col {
                    acc += wy * wx * f64::from(line[x]);
                    total += wy * wx;
                }
            }
            out.push((acc / total).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// For every output cell, the source indices it overlaps and the overlap.
fn area_weights(src_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let start = o as f64 * scale;
            let end = start + scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src_len);
            (first..last)
                .filter_map(|s| {
                    let overlap = (end.min(s as f64 + 1.0) - start.max(s as f64)).max(0.0);
                    (overlap > 1e-12).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}

/// Four 84×84 grayscale planes, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    planes: Vec<u8>,
}

impl Observation {
    pub fn from_planes(planes: Vec<u8>) -> Result<Self> {
        if planes.len() != OBS_FRAMES * PLANE_LEN {
            return Err(SceneError::Domain(format!(
                "observation holds {} values, expected {}",
                planes.len(),
                OBS_FRAMES * PLANE_LEN
            )));
        }
        Ok(Self { planes })
    }

    /// Raw 8-bit storage, plane-major.
    pub fn as_bytes(&self) -> &[u8] {
        &self.planes
    }

    /// Plane `k` (0 = oldest) as 8-bit values.
    pub fn plane(&self, k: usize) -> &[u8] {
        &self.planes[k * PLANE_LEN..(k + 1) * PLANE_LEN]
    }

    /// Values scaled to [0, 1].
    pub fn to_f32(&self) -> Vec<f32> {
        self.planes.iter().map(|&v| f32::from(v) / 255.0).collect()
    }

    fn push(&mut self, plane: &[u8]) {
        self.planes.copy_within(PLANE_LEN.., 0);
        let tail = self.planes.len() - PLANE_LEN;
        self.planes[tail..].copy_from_slice(plane);
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_len: usize,
    /// Sample one of the 24 motion augmentations per episode; identity only
    /// when disabled.
    pub augment: bool,
    /// Bounds of the log-uniform initial exposure, µs-eq.
    pub initial_exposure_range: (f64, f64),
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { episode_len: 500, augment: true, initial_exposure_range: (100.0, 20_000.0) }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Full-resolution frame captured with the new exposure.
    pub frame: Image,
}

struct Episode {
    augmentation: AugmentationSpec,
    cursor: usize,
    exposure: f64,
    last_frame: Image,
    observation: Observation,
    step: usize,
    done: bool,
}

/// Replays a bracketed sequence as an interactive camera.
pub struct ExposureEnv {
    sequence: Arc<BracketedSequence>,
    config: EnvConfig,
    reward: Arc<dyn RewardFunction + Send + Sync>,
    episode: Option<Episode>,
}

impl ExposureEnv {
    pub fn new(
        sequence: Arc<BracketedSequence>,
        config: EnvConfig,
        reward: Arc<dyn RewardFunction + Send + Sync>,
    ) -> Result<Self> {
        let (lo, hi) = config.initial_exposure_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(SceneError::Configuration(format!("invalid initial exposure range ({lo}, {hi})")));
        }
        if config.episode_len == 0 {
            return Err(SceneError::Configuration("episode length must be positive".into()));
        }
        let env = Self { sequence, config, reward, episode: None };
        if env.feasible_augmentations().is_empty() {
            return Err(SceneError::Configuration(format!(
                "sequence of {} frames is too short for any augmentation",
                env.sequence.len()
            )));
        }
        Ok(env)
    }

    pub fn sequence(&self) -> &BracketedSequence {
        &self.sequence
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Augmentations leaving room for the primed history plus one step.
    pub fn feasible_augmentations(&self) -> Vec<AugmentationSpec> {
        let n = self.sequence.len();
        let candidates = if self.config.augment {
            enumerate_augmentations()
        } else {
            vec![AugmentationSpec::identity()]
        };
        candidates.into_iter().filter(|a| a.augmented_len(n) > OBS_FRAMES).collect()
    }

    /// Starts a new episode whose augmentation, start cursor and initial
    /// exposure are all drawn from `episode_seed`.
    pub fn reset(&mut self, episode_seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let feasible = self.feasible_augmentations();
        let augmentation = feasible[rng.random_range(0..feasible.len())];
        let len = augmentation.augmented_len(self.sequence.len());
        let last_start = len - OBS_FRAMES - 1;
        let max_start = if len >= OBS_FRAMES + self.config.episode_len {
            len - OBS_FRAMES - self.config.episode_len
        } else {
            (len - OBS_FRAMES) / 2
        }
        .min(last_start);
        let start = rng.random_range(0..=max_start);
        let (lo, hi) = self.config.initial_exposure_range;
        let exposure = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().clamp(lo, hi);
        self.reset_with(augmentation, start, exposure)
    }

    /// Starts an episode at an explicit augmentation, start cursor and
    /// exposure. The history is primed with frames `start..start + 4`.
    pub fn reset_with(&mut self, augmentation: AugmentationSpec, start: usize, exposure: f64) -> Result<Observation> {
        let len = augmentation.augmented_len(self.sequence.len());
        if start + OBS_FRAMES >= len {
            return Err(SceneError::EndOfSequence { cursor: start + OBS_FRAMES, len });
        }
        let mut planes = Vec::with_capacity(OBS_FRAMES * PLANE_LEN);
        let mut last_frame = None;
        for cursor in start..start + OBS_FRAMES {
            let frame = observe_at(&self.sequence, &augmentation, cursor, exposure)?;
            planes.extend(area_resize(&frame, OBS_SIZE, OBS_SIZE));
            last_frame = Some(frame);
        }
        let observation = Observation::from_planes(planes)?;
        self.episode = Some(Episode {
            augmentation,
            cursor: start + OBS_FRAMES - 1,
            exposure,
            last_frame: last_frame.expect("history is primed"),
            observation: observation.clone(),
            step: 0,
            done: false,
        });
        Ok(observation)
    }

    /// Applies an EV adjustment, captures the next frame and scores it.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        let n = self.sequence.len();
        let episode_len = self.config.episode_len;
        let episode = self
            .episode
            .as_mut()
            .ok_or_else(|| SceneError::Protocol("step called before reset".into()))?;
        if episode.done {
            return Err(SceneError::Protocol("step called after the episode ended".into()));
        }
        let action = if action.is_finite() { action.clamp(-MAX_EV_STEP, MAX_EV_STEP) } else { 0.0 };
        let exposure = apply_ev_delta(episode.exposure, action)?;
        let cursor = episode.cursor + 1;
        let aug = episode.augmentation;
        let frame = observe_at(&self.sequence, &aug, cursor, exposure)?;

        let gt = match (aug.source_index(cursor - 1, n), aug.source_index(cursor, n)) {
            (Some(a), Some(b)) => self.sequence.relative_pose(a, b).map(|p| flip_relative_pose(&p, &aug)),
            _ => None,
        };
        let ctx = StepContext {
            current: &frame,
            previous: &episode.last_frame,
            gt_relative_pose: gt,
            intrinsics: self.sequence.intrinsics,
        };
        let reward = self.reward.evaluate(&ctx)?;

        episode.observation.push(&area_resize(&frame, OBS_SIZE, OBS_SIZE));
        episode.cursor = cursor;
        episode.exposure = exposure;
        episode.step += 1;
        episode.done = episode.step >= episode_len || cursor + 1 >= aug.augmented_len(n);
        episode.last_frame = frame.clone();
        Ok(StepOutcome { observation: episode.observation.clone(), reward, done: episode.done, frame })
    }

    /// Exposure of the most recent frame, µs-eq.
    pub fn current_exposure(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.exposure)
    }

    pub fn episode_step(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.step)
    }

    pub fn augmentation(&self) -> Option<AugmentationSpec> {
        self.episode.as_ref().map(|e| e.augmentation)
    }

    pub fn cursor(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.cursor)
    }

    /// Most recent full-resolution frame.
    pub fn last_frame(&self) -> Option<&Image> {
        self.episode.as_ref().map(|e| &e.last_frame)
    }
}
