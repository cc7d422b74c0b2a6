//! Runtime exposure controllers and exposure-to-(time, gain) allocation.
//!
//! Every controller sees the frame just captured together with the exposure
//! it was taken at, and returns the exposure for the next frame.

use thiserror::Error;

use crate::photometry::{apply_ev_delta, clamp_exposure, compose_exposure, Image, PhotometryError, MAX_EV_STEP};
use crate::scene::{render_from_bracket, BracketedFrame, BracketedSequence, SceneError};
use crate::CameraResponse;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("controller '{0}' needs the bracketed capture of each frame")]
    MissingBracket(String),
    #[error(transparent)]
    Photometry(#[from] PhotometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("model error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, ControlError>;

/// What a controller observes after each capture.
pub struct ControlInput<'a> {
    pub frame: &'a Image,
    /// Composite exposure `frame` was captured with, µs-eq.
    pub exposure: f64,
    /// Bracket of the same instant, when the source provides one.
    pub bracket: Option<&'a BracketedFrame>,
}

pub trait ExposureController {
    fn name(&self) -> &str;

    /// Clears any per-sequence state.
    fn reset(&mut self) {}

    fn next_exposure(&mut self, input: &ControlInput<'_>) -> Result<f64>;
}

/// Proportional feedback on log mean intensity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinController {
    pub gain: f64,
    pub target: f64,
}

impl Default for BuiltinController {
    fn default() -> Self {
        Self { gain: 0.35, target: 127.5 }
    }
}

impl BuiltinController {
    /// EV adjustment for a frame of mean intensity `mean`; positive darkens.
    pub fn ev_delta(&self, mean: f64) -> f64 {
        (self.gain * (mean.max(1.0) / self.target).log2()).clamp(-MAX_EV_STEP, MAX_EV_STEP)
    }

    pub fn step(&self, frame: &Image, exposure: f64) -> Result<f64> {
        Ok(apply_ev_delta(exposure, self.ev_delta(frame.mean()))?)
    }
}

impl ExposureController for BuiltinController {
    fn name(&self) -> &str {
        "builtin"
    }

    fn next_exposure(&mut self, input: &ControlInput<'_>) -> Result<f64> {
        self.step(input.frame, input.exposure)
    }
}

/// Gradient-information metric of a frame.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientMetric {
    pub lambda: f64,
    pub delta: f64,
}

impl Default for GradientMetric {
    fn default() -> Self {
        Self { lambda: 1000.0, delta: 0.06 }
    }
}

impl GradientMetric {
    /// Mean over interior pixels of the log-compressed gradient magnitude,
    /// with magnitudes below `delta` contributing zero. `lut` maps raw
    /// intensities before differencing.
    fn evaluate_mapped(&self, img: &Image, lut: &[f64; 256]) -> f64 {
        let (w, h) = (img.width(), img.height());
        if w < 3 || h < 3 {
            return 0.0;
        }
        let norm = (self.lambda * (1.0 - self.delta) + 1.0).ln();
        let data = img.data();
        let at = |x: usize, y: usize| lut[data[y * w + x] as usize];
        let mut sum = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = (at(x + 1, y) - at(x - 1, y)) * 0.5;
                let gy = (at(x, y + 1) - at(x, y - 1)) * 0.5;
                let g = (gx * gx + gy * gy).sqrt();
                if g >= self.delta {
                    sum += (self.lambda * (g - self.delta) + 1.0).ln() / norm;
                }
            }
        }
        sum / ((w - 2) * (h - 2)) as f64
    }

    pub fn evaluate(&self, img: &Image) -> f64 {
        self.evaluate_gamma(img, 1.0)
    }

    /// Metric of the image after the intensity mapping `(I/255)^γ`.
    pub fn evaluate_gamma(&self, img: &Image, gamma: f64) -> f64 {
        let lut: [f64; 256] = std::array::from_fn(|i| (i as f64 / 255.0).powf(gamma));
        self.evaluate_mapped(img, &lut)
    }
}

/// Gamma-probing gradient controller.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientController {
    pub gammas: Vec<f64>,
    pub metric: GradientMetric,
    /// Step size towards the exposure implied by the best gamma.
    pub rate: f64,
}

impl Default for GradientController {
    fn default() -> Self {
        Self {
            gammas: vec![0.5, 0.667, 0.8, 1.0, 1.25, 1.5, 2.0],
            metric: GradientMetric::default(),
            rate: 0.5,
        }
    }
}

impl GradientController {
    pub fn metrics(&self, frame: &Image) -> Vec<f64> {
        self.gammas.iter().map(|&g| self.metric.evaluate_gamma(frame, g)).collect()
    }

    /// Gamma with the largest metric; among exact ties the one closest to 1.
    pub fn best_gamma(&self, frame: &Image) -> f64 {
        let metrics = self.metrics(frame);
        let best = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.gammas
            .iter()
            .zip(&metrics)
            .filter(|(_, &m)| m == best)
            .map(|(&g, _)| g)
            .min_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()))
            .unwrap_or(1.0)
    }

    pub fn step(&self, frame: &Image, exposure: f64) -> Result<f64> {
        let gamma = self.best_gamma(frame);
        let limit = MAX_EV_STEP.exp2();
        let ratio = (1.0 + self.rate * (1.0 / gamma - 1.0)).clamp(1.0 / limit, limit);
        Ok(clamp_exposure(exposure * ratio))
    }
}

impl ExposureController for GradientController {
    fn name(&self) -> &str {
        "gradient"
    }

    fn next_exposure(&mut self, input: &ControlInput<'_>) -> Result<f64> {
        self.step(input.frame, input.exposure)
    }
}

/// Objective maximised by the one-shot search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OneShotMetric {
    /// Negative distance of the mean intensity from mid-grey.
    Mean,
    Gradient,
}

/// Exhaustive search over re-synthesised candidate exposures.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneShotController {
    pub candidates: usize,
    pub min_exposure_us: f64,
    pub max_exposure_us: f64,
    pub metric: OneShotMetric,
    pub gradient: GradientMetric,
    #[serde(skip)]
    pub response: Option<CameraResponse>,
}

impl Default for OneShotController {
    fn default() -> Self {
        Self {
            candidates: 25,
            min_exposure_us: 50.0,
            max_exposure_us: 80_000.0,
            metric: OneShotMetric::Mean,
            gradient: GradientMetric::default(),
            response: None,
        }
    }
}

impl OneShotController {
    pub fn with_response(response: CameraResponse, metric: OneShotMetric) -> Self {
        Self { response: Some(response), metric, ..Self::default() }
    }

    /// Candidate exposures, evenly spaced in log exposure.
    pub fn candidate_exposures(&self) -> Vec<f64> {
        let k = self.candidates.max(2);
        let (lo, hi) = (self.min_exposure_us.ln(), self.max_exposure_us.ln());
        (0..k).map(|i| (lo + (hi - lo) * i as f64 / (k - 1) as f64).exp()).collect()
    }

    pub fn score(&self, img: &Image) -> f64 {
        match self.metric {
            OneShotMetric::Mean => -(img.mean() - 127.5).abs(),
            OneShotMetric::Gradient => self.gradient.evaluate(img),
        }
    }

    /// Scores of every candidate on `frame`.
    pub fn scan(&self, frame: &BracketedFrame, response: &CameraResponse) -> Result<Vec<(f64, f64)>> {
        self.candidate_exposures()
            .into_iter()
            .map(|e| Ok((e, self.score(&render_from_bracket(frame, e, response)?))))
            .collect()
    }

    /// Best candidate exposure for `frame` (first one on ties).
    pub fn fit(&self, frame: &BracketedFrame, response: &CameraResponse) -> Result<f64> {
        let scores = self.scan(frame, response)?;
        let mut best = scores[0];
        for &(e, s) in &scores[1..] {
            if s > best.1 {
                best = (e, s);
            }
        }
        Ok(clamp_exposure(best.0))
    }
}

impl ExposureController for OneShotController {
    fn name(&self) -> &str {
        "oneshot"
    }

    fn next_exposure(&mut self, input: &ControlInput<'_>) -> Result<f64> {
        let bracket = input.bracket.ok_or_else(|| ControlError::MissingBracket("oneshot".into()))?;
        let response = self
            .response
            .as_ref()
            .ok_or_else(|| ControlError::Model("oneshot controller has no camera response".into()))?;
        self.fit(bracket, response)
    }
}

/// Bounds of the time-first allocation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AllocLimits {
    pub t_max_us: f64,
    pub g_max_db: f64,
}

impl Default for AllocLimits {
    fn default() -> Self {
        Self { t_max_us: 10_000.0, g_max_db: 24.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub time_us: f64,
    pub gain_db: f64,
    /// The requested exposure exceeded what `t_max` and `g_max` can reach.
    pub saturated: bool,
}

/// Splits a composite exposure into time and gain, using time first.
pub fn allocate(exposure: f64, limits: &AllocLimits) -> Result<Allocation> {
    if !(exposure > 0.0) || !exposure.is_finite() {
        return Err(PhotometryError::NonPositiveExposure(exposure).into());
    }
    if !(limits.t_max_us > 0.0 && limits.g_max_db > 0.0) {
        return Err(ControlError::Model(format!("invalid allocation limits {limits:?}")));
    }
    let time_us = exposure.min(limits.t_max_us);
    if exposure <= limits.t_max_us {
        return Ok(Allocation { time_us, gain_db: 0.0, saturated: false });
    }
    let gain_db = 20.0 * (exposure / time_us).log10();
    if gain_db > limits.g_max_db {
        return Ok(Allocation { time_us, gain_db: limits.g_max_db, saturated: true });
    }
    Ok(Allocation { time_us, gain_db, saturated: false })
}

impl Allocation {
    pub fn composite(&self) -> Result<f64> {
        Ok(compose_exposure(self.time_us, self.gain_db)?)
    }
}

/// One frame of a closed-loop run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LoopRecord {
    pub frame: usize,
    pub exposure: f64,
    pub mean_intensity: f64,
    pub saturation: f64,
}

/// Drives a controller over a sequence: frame `i` is rendered at the
/// exposure chosen after frame `i - 1`. `on_frame` sees each rendered frame.
pub fn run_closed_loop(
    sequence: &BracketedSequence,
    controller: &mut dyn ExposureController,
    initial_exposure: f64,
    mut on_frame: impl FnMut(usize, &Image),
) -> Result<Vec<LoopRecord>> {
    controller.reset();
    let mut exposure = clamp_exposure(initial_exposure);
    let mut records = Vec::with_capacity(sequence.len());
    for (i, bracket) in sequence.frames().iter().enumerate() {
        let frame = render_from_bracket(bracket, exposure, &sequence.response)?;
        on_frame(i, &frame);
        records.push(LoopRecord {
            frame: i,
            exposure,
            mean_intensity: frame.mean(),
            saturation: frame.saturation_fraction(),
        });
        let input = ControlInput { frame: &frame, exposure, bracket: Some(bracket) };
        exposure = clamp_exposure(controller.next_exposure(&input)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometry::{ev_of, Exposure};

    fn img(v: u8) -> Image {
        Image::filled(32, 24, v, Exposure::new(1000.0, 0.0).unwrap())
    }

    #[test]
    fn builtin_sign_and_fixed_point() {
        let c = BuiltinController::default();
        assert_eq!(c.ev_delta(127.5), 0.0);
        assert!(c.step(&img(255), 1000.0).unwrap() < 1000.0);
        assert!(c.step(&img(10), 1000.0).unwrap() > 1000.0);
        let e = c.step(&img(0), 1000.0).unwrap();
        assert!((ev_of(e) - ev_of(1000.0)).abs() <= 2.0 + 1e-12);
    }

    #[test]
    fn gradient_tie_goes_to_unity() {
        let c = GradientController::default();
        assert_eq!(c.best_gamma(&img(200)), 1.0);
        assert_eq!(c.step(&img(200), 2000.0).unwrap(), 2000.0);
    }

    #[test]
    fn gradient_metric_is_flip_invariant() {
        let data: Vec<u8> = (0..32 * 24).map(|i| ((i * 37) % 251) as u8).collect();
        let a = Image::new(32, 24, data, Exposure::new(1000.0, 0.0).unwrap()).unwrap();
        let mut b = a.clone();
        b.flip_horizontal();
        b.flip_vertical();
        let m = GradientMetric::default();
        for g in [0.5, 1.0, 2.0] {
            assert!((m.evaluate_gamma(&a, g) - m.evaluate_gamma(&b, g)).abs() < 1e-12);
        }
    }

    #[test]
    fn allocation_examples() {
        let l = AllocLimits::default();
        let a = allocate(1000.0, &l).unwrap();
        assert_eq!((a.time_us, a.gain_db, a.saturated), (1000.0, 0.0, false));
        let a = allocate(50_000.0, &l).unwrap();
        assert_eq!(a.time_us, 10_000.0);
        assert!((a.gain_db - 13.979_400_086_720_377).abs() < 1e-9);
        assert!((a.composite().unwrap() / 50_000.0 - 1.0).abs() < 1e-9);
        let a = allocate(1e7, &l).unwrap();
        assert_eq!((a.time_us, a.gain_db, a.saturated), (10_000.0, 24.0, true));
        assert!(allocate(0.0, &l).is_err());
    }

    #[test]
    fn candidates_span_the_range() {
        let c = OneShotController::default();
        let e = c.candidate_exposures();
        assert_eq!(e.len(), 25);
        assert!((e[0] - 50.0).abs() < 1e-9 && (e[24] - 80_000.0).abs() < 1e-6);
    }
}
