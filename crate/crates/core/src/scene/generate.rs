//! Procedural HDR scenes with known camera motion.
//!
//! A scene is a fronto-parallel textured plane at unit depth, seen by a
//! pinhole camera that translates along x (the pan offset, in panorama
//! pixels) and optionally yaws. Rendering applies the forward imaging model
//! `I = G⁻¹(ln e + ln E)` followed by optional Gaussian intensity noise.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BracketedFrame, BracketedSequence, Intrinsics, Result, SceneError, BRACKET_LADDER_US};
use crate::photometry::{CameraResponse, Exposure, Image, IrradianceMap};
use crate::vision::{RigidPose, So3};

pub const FRAME_WIDTH: usize = 512;
pub const FRAME_HEIGHT: usize = 384;

/// Irradiance rendered to mid-grey by a 1 ms exposure on the anchored
/// response tables.
const MID_IRRADIANCE: f64 = 1e-3;

/// Camera placement for one frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathPoint {
    pub offset_px: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_rad: Option<f64>,
}

impl PathPoint {
    pub fn at(offset_px: f64) -> Self {
        Self { offset_px, yaw_rad: None }
    }

    /// World pose of the camera (camera-to-world).
    pub fn world_pose(&self, intrinsics: &Intrinsics) -> RigidPose {
        RigidPose {
            rotation: So3::about_axis(1, self.yaw_rad.unwrap_or(0.0)),
            translation: Vector3::new(self.offset_px / intrinsics.fx, 0.0, 0.0),
        }
    }
}

/// Scene-wide irradiance change from `frame` onwards.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LightEvent {
    pub frame: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub pano_width: usize,
    pub pano_height: usize,
    /// Ratio of the largest to the smallest irradiance of the panorama.
    pub dynamic_range: f64,
    pub path: Vec<PathPoint>,
    #[serde(default)]
    pub light_events: Vec<LightEvent>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn default_fps() -> f64 {
    20.0
}

impl SceneSpec {
    /// Panning camera over a high-contrast scene whose lights go off
    /// (×1/16) at frame 100 and back on (×16) at frame 200.
    pub fn switching(frame_count: usize) -> Self {
        let path = (0..frame_count)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / 200.0;
                PathPoint::at((480.0 + 400.0 * phase.sin()).round())
            })
            .collect();
        Self {
            pano_width: 1536,
            pano_height: 640,
            dynamic_range: 1e4,
            path,
            light_events: vec![
                LightEvent { frame: 100, scale: 1.0 / 16.0 },
                LightEvent { frame: 200, scale: 16.0 },
            ],
            noise_sigma: 2.0,
            fps: default_fps(),
        }
    }

    /// Static camera with the light-off/light-on events of [`Self::switching`].
    pub fn react(frame_count: usize) -> Self {
        Self {
            path: vec![PathPoint::at(480.0); frame_count],
            noise_sigma: 1.0,
            ..Self::switching(frame_count)
        }
    }

    pub fn frame_count(&self) -> usize {
        self.path.len()
    }

    /// Cumulative irradiance scale in effect at `frame`.
    pub fn light_scale(&self, frame: usize) -> f64 {
        self.light_events.iter().filter(|ev| ev.frame <= frame).map(|ev| ev.scale).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pano_width == 0 || self.pano_height == 0 {
            return Err(SceneError::Domain("panorama has zero area".into()));
        }
        if !(self.dynamic_range >= 1.0) || !self.dynamic_range.is_finite() {
            return Err(SceneError::Domain(format!(
                "dynamic range must be >= 1, got {}",
                self.dynamic_range
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SceneError::Domain("noise sigma must be non-negative".into()));
        }
        if let Some(ev) = self.light_events.iter().find(|ev| !(ev.scale > 0.0)) {
            return Err(SceneError::Domain(format!("light event at frame {} has scale {}", ev.frame, ev.scale)));
        }
        if !(self.fps > 0.0) {
            return Err(SceneError::Domain("fps must be positive".into()));
        }
        Ok(())
    }
}

/// Smooth value noise: random lattice values, smoothstep-interpolated.
fn value_noise(width: usize, height: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y / cell;
        let ty = smooth((y % cell) as f64 / cell as f64);
        for x in 0..width {
            let gx = x / cell;
            let tx = smooth((x % cell) as f64 / cell as f64);
            let v00 = lattice[gy * gw + gx];
            let v10 = lattice[gy * gw + gx + 1];
            let v01 = lattice[(gy + 1) * gw + gx];
            let v11 = lattice[(gy + 1) * gw + gx + 1];
            let top = v00 + (v10 - v00) * tx;
            let bottom = v01 + (v11 - v01) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

/// Deterministic log-domain texture rescaled to the requested dynamic range.
///
/// The texture mixes multi-octave value noise with flat rectangular panels
/// (sharp edges and corners for the feature detector) and at least one
/// bright "window" of at least 64×64 pixels.
pub fn generate_panorama(seed: u64, spec: &SceneSpec) -> Result<IrradianceMap> {
    spec.validate()?;
    let (w, h) = (spec.pano_width, spec.pano_height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![0.0f64; w * h];
    let mut amplitude = 1.0;
    for cell in [256usize, 128, 64, 32, 16, 8, 4] {
        let layer = value_noise(w, h, cell, &mut rng);
        for (f, v) in field.iter_mut().zip(layer) {
            *f += amplitude * v;
        }
        amplitude *= 0.6;
    }

    let panels = (w * h / 6000).max(1);
    for _ in 0..panels {
        let pw = rng.random_range(12..=96).min(w);
        let ph = rng.random_range(12..=96).min(h);
        let x0 = rng.random_range(0..=w - pw);
        let y0 = rng.random_range(0..=h - ph);
        let offset = rng.random_range(-0.6..0.6);
        for y in y0..y0 + ph {
            for f in &mut field[y * w + x0..y * w + x0 + pw] {
                *f += offset;
            }
        }
    }

    let (lo, hi) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let windows = rng.random_range(1..=3);
    for _ in 0..windows {
        let ww = rng.random_range(64..=128).min(w);
        let wh = rng.random_range(64..=128).min(h);
        let x0 = rng.random_range(0..=w - ww);
        let y0 = rng.random_range(0..=h - wh);
        for y in y0..y0 + wh {
            for (i, f) in field[y * w + x0..y * w + x0 + ww].iter_mut().enumerate() {
                // A faint ramp keeps some structure inside the window.
                *f = hi + 0.25 * (hi - lo) + 0.02 * (hi - lo) * ((i + y) % 16) as f64 / 16.0;
            }
        }
    }

    let (lo, hi) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let log_range = spec.dynamic_range.ln();
    let values = field
        .iter()
        .map(|&f| {
            let unit = if span > 0.0 { (f - lo) / span } else { 0.0 };
            if spec.dynamic_range == 1.0 {
                MID_IRRADIANCE
            } else {
                MID_IRRADIANCE * (log_range * (unit - 0.5)).exp()
            }
        })
        .collect();
    Ok(IrradianceMap { width: w, height: h, values })
}

/// Per-frame rendering knobs besides pose and exposure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub light_scale: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self { light_scale: 1.0, noise_sigma: 0.0, noise_seed: 0 }
    }
}

/// Log irradiance seen by every pixel of a frame at `pose`.
fn view_log_irradiance(pan: &IrradianceMap, pose: &PathPoint, intrinsics: &Intrinsics) -> Result<Vec<f64>> {
    if pan.height < FRAME_HEIGHT {
        return Err(SceneError::Domain(format!(
            "panorama height {} is below the frame height {FRAME_HEIGHT}",
            pan.height
        )));
    }
    let v_margin = (pan.height - FRAME_HEIGHT) as f64 / 2.0;
    let world = pose.world_pose(intrinsics);
    let r = world.rotation.matrix();
    let cam_x = world.translation.x;
    let mut out = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT);
    for v in 0..FRAME_HEIGHT {
        for u in 0..FRAME_WIDTH {
            let ray = r * Vector3::new(
                (u as f64 - intrinsics.cx) / intrinsics.fx,
                (v as f64 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let out_of_bounds = || SceneError::Domain(format!(
                "view at offset {} px, yaw {:?} leaves the panorama",
                pose.offset_px, pose.yaw_rad
            ));
            if ray.z <= 1e-9 {
                return Err(out_of_bounds());
            }
            let s = 1.0 / ray.z;
            let px = intrinsics.fx * (cam_x + s * ray.x) + intrinsics.cx;
            let py = intrinsics.fy * (s * ray.y) + intrinsics.cy + v_margin;
            // Snap values within rounding noise of an integer so that pure
            // integer offsets copy the panorama exactly.
            let snap = |c: f64| if (c - c.round()).abs() < 1e-9 { c.round() } else { c };
            let e = pan.sample(snap(px), snap(py)).ok_or_else(out_of_bounds)?;
            out.push(e.ln());
        }
    }
    Ok(out)
}

fn noise_field(sigma: f64, seed: u64) -> Option<Vec<f32>> {
    if sigma <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    Some((0..FRAME_WIDTH * FRAME_HEIGHT).map(|_| normal.sample(&mut rng) as f32).collect())
}

fn expose(
    log_irradiance: &[f64],
    exposure: Exposure,
    response: &CameraResponse,
    light_scale: f64,
    noise: Option<&[f32]>,
) -> Image {
    let log_e = (exposure.composite() * light_scale).ln();
    let data = log_irradiance
        .iter()
        .enumerate()
        .map(|(i, &le)| {
            let level = response.intensity(log_e + le);
            match noise {
                Some(n) => (f32::from(level) + n[i]).round().clamp(0.0, 255.0) as u8,
                None => level,
            }
        })
        .collect();
    Image::new(FRAME_WIDTH, FRAME_HEIGHT, data, exposure).expect("frame buffer size")
}

/// Renders one 512×384 frame of the panorama.
pub fn render_frame(
    pan: &IrradianceMap,
    pose: &PathPoint,
    exposure: Exposure,
    response: &CameraResponse,
    intrinsics: &Intrinsics,
    params: &RenderParams,
) -> Result<Image> {
    let view = view_log_irradiance(pan, pose, intrinsics)?;
    let noise = noise_field(params.noise_sigma, params.noise_seed);
    Ok(expose(&view, exposure, response, params.light_scale, noise.as_deref()))
}

/// Captures the five-exposure bracket at `pose`. All slots share one noise
/// realisation, so intensities never decrease along the ladder.
pub fn capture_bracket(
    pan: &IrradianceMap,
    pose: &PathPoint,
    response: &CameraResponse,
    intrinsics: &Intrinsics,
    params: &RenderParams,
    timestamp: f64,
) -> Result<BracketedFrame> {
    let view = view_log_irradiance(pan, pose, intrinsics)?;
    let noise = noise_field(params.noise_sigma, params.noise_seed);
    let images = BRACKET_LADDER_US
        .iter()
        .map(|&t| {
            let exposure = Exposure::new(t, 0.0).expect("ladder exposures are in range");
            expose(&view, exposure, response, params.light_scale, noise.as_deref())
        })
        .collect();
    BracketedFrame::new(images, timestamp)
}

/// Renders the full bracketed sequence of a scene, with ground-truth poses.
pub fn generate_sequence(
    seed: u64,
    spec: &SceneSpec,
    response: &CameraResponse,
    intrinsics: &Intrinsics,
) -> Result<BracketedSequence> {
    let pan = generate_panorama(seed, spec)?;
    let mut frames = Vec::with_capacity(spec.frame_count());
    let mut poses = Vec::with_capacity(spec.frame_count());
    for (i, point) in spec.path.iter().enumerate() {
        let params = RenderParams {
            light_scale: spec.light_scale(i),
            noise_sigma: spec.noise_sigma,
            noise_seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64),
        };
        frames.push(capture_bracket(&pan, point, response, intrinsics, &params, i as f64 / spec.fps)?);
        poses.push(point.world_pose(intrinsics));
    }
    BracketedSequence::new(frames, response.clone(), *intrinsics, Some(poses), spec.fps)
}
