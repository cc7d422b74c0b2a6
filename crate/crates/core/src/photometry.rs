//! Exposure algebra, camera response calibration and exposure re-synthesis.
//!
//! Exposures are handled as a single composite value `e = t * 10^(g / 20)`
//! expressed in microsecond-equivalents at 0 dB. The camera response is kept
//! in its log-inverse form `G(I) = ln e + ln E`, tabulated over the 256
//! intensity levels and anchored at `G(128) = 0`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Lower bound of every exposure handled by the artifact (µs-eq).
pub const MIN_EXPOSURE_US: f64 = 10.0;
/// Upper bound of every exposure handled by the artifact (µs-eq).
pub const MAX_EXPOSURE_US: f64 = 100_000.0;
/// Largest analog gain accepted by [`Exposure::new`].
pub const MAX_GAIN_DB: f64 = 24.0;
/// Largest magnitude of a relative exposure action, in stops.
pub const MAX_EV_STEP: f64 = 2.0;
/// Aperture used for exposure values. Only EV differences matter for a
/// fixed-lens camera, so the aperture is pinned to one.
pub const APERTURE_F: f64 = 1.0;
/// Intensity level at which the response table is anchored to zero.
pub const RESPONSE_ANCHOR: usize = 128;

const MONOTONE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PhotometryError {
    #[error("exposure time must be positive, got {0} us")]
    NonPositiveTime(f64),
    #[error("analog gain must be non-negative, got {0} dB")]
    NegativeGain(f64),
    #[error("exposure time {0} us outside [{MIN_EXPOSURE_US}, {MAX_EXPOSURE_US}]")]
    TimeOutOfRange(f64),
    #[error("analog gain {0} dB outside [0, {MAX_GAIN_DB}]")]
    GainOutOfRange(f64),
    #[error("composite exposure must be positive and finite, got {0}")]
    NonPositiveExposure(f64),
    #[error("EV action {0} outside [-2, 2]")]
    ActionOutOfRange(f64),
    #[error("image buffer holds {got} bytes, expected {expected}")]
    ImageSize { expected: usize, got: usize },
    #[error("invalid camera response: {0}")]
    InvalidResponse(String),
    #[error("calibration data is rank deficient: {0}")]
    RankDeficient(String),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("{path}: {message}")]
    ResponseFile { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PhotometryError>;

/// Returns the composite exposure `t * 10^(g / 20)`.
pub fn compose_exposure(time_us: f64, gain_db: f64) -> Result<f64> {
    if !(time_us > 0.0) || !time_us.is_finite() {
        return Err(PhotometryError::NonPositiveTime(time_us));
    }
    if !(gain_db >= 0.0) || !gain_db.is_finite() {
        return Err(PhotometryError::NegativeGain(gain_db));
    }
    Ok(time_us * 10f64.powf(gain_db / 20.0))
}

/// Applies a relative exposure action in stops. An increment of `-1`
/// doubles the exposure, `+1` halves it. The result is clamped to the
/// artifact exposure bounds.
pub fn apply_ev_delta(exposure: f64, delta_ev: f64) -> Result<f64> {
    if !(exposure > 0.0) || !exposure.is_finite() {
        return Err(PhotometryError::NonPositiveExposure(exposure));
    }
    if !(-MAX_EV_STEP..=MAX_EV_STEP).contains(&delta_ev) {
        return Err(PhotometryError::ActionOutOfRange(delta_ev));
    }
    Ok(clamp_exposure(exposure * (-delta_ev).exp2()))
}

pub fn clamp_exposure(exposure: f64) -> f64 {
    exposure.clamp(MIN_EXPOSURE_US, MAX_EXPOSURE_US)
}

/// Exposure value `log2(f^2 / t)` with `t` in seconds.
pub fn ev_of(exposure_us: f64) -> f64 {
    (APERTURE_F * APERTURE_F / (exposure_us * 1e-6)).log2()
}

/// Exposure time and analog gain of one capture.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Exposure {
    pub time_us: f64,
    pub gain_db: f64,
}

impl Exposure {
    pub fn new(time_us: f64, gain_db: f64) -> Result<Self> {
        compose_exposure(time_us, gain_db)?;
        if !(MIN_EXPOSURE_US..=MAX_EXPOSURE_US).contains(&time_us) {
            return Err(PhotometryError::TimeOutOfRange(time_us));
        }
        if gain_db > MAX_GAIN_DB {
            return Err(PhotometryError::GainOutOfRange(gain_db));
        }
        Ok(Self { time_us, gain_db })
    }

    /// A 0 dB exposure carrying the whole composite value as time.
    pub fn from_composite(exposure_us: f64) -> Result<Self> {
        Self::new(exposure_us, 0.0)
    }

    pub fn composite(&self) -> f64 {
        self.time_us * 10f64.powf(self.gain_db / 20.0)
    }

    pub fn ev(&self) -> f64 {
        ev_of(self.composite())
    }
}

/// 8-bit grayscale raster, row-major, with the exposure it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
    pub exposure: Exposure,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>, exposure: Exposure) -> Result<Self> {
        if data.len() != width * height {
            return Err(PhotometryError::ImageSize { expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data, exposure })
    }

    pub fn filled(width: usize, height: usize, value: u8, exposure: Exposure) -> Self {
        Self { width, height, data: vec![value; width * height], exposure }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: u64 = self.data.iter().map(|&v| u64::from(v)).sum();
        sum as f64 / self.data.len() as f64
    }

    /// Fraction of pixels clipped at 0 or 255.
    pub fn saturation_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let clipped = self.data.iter().filter(|&&v| v == 0 || v == 255).count();
        clipped as f64 / self.data.len() as f64
    }

    pub fn flip_horizontal(&mut self) {
        for row in self.data.chunks_exact_mut(self.width) {
            row.reverse();
        }
    }

    pub fn flip_vertical(&mut self) {
        let w = self.width;
        for y in 0..self.height / 2 {
            let (top, bottom) = self.data.split_at_mut((self.height - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }

    /// Maps every pixel through a 256-entry lookup table.
    pub fn map_lut(&self, lut: &[u8; 256], exposure: Exposure) -> Image {
        let data = self.data.iter().map(|&v| lut[usize::from(v)]).collect();
        Image { width: self.width, height: self.height, data, exposure }
    }
}

/// Relative scene irradiance, one positive value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl IrradianceMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear sample at continuous pixel coordinates. Returns `None`
    /// outside the map.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        if x0 >= self.width || y0 >= self.height {
            return None;
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        if x1 >= self.width || y1 >= self.height {
            return None;
        }
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

/// Log-inverse camera response `G`, tabulated for every intensity level.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraResponse {
    table: Vec<f64>,
}

impl CameraResponse {
    /// Validates a 256-entry non-decreasing table.
    pub fn from_table(table: Vec<f64>) -> Result<Self> {
        if table.len() != 256 {
            return Err(PhotometryError::InvalidResponse(format!(
                "expected 256 entries, got {}",
                table.len()
            )));
        }
        if let Some(i) = table.iter().position(|v| !v.is_finite()) {
            return Err(PhotometryError::InvalidResponse(format!("entry {i} is not finite")));
        }
        if let Some(i) = (1..256).find(|&i| table[i] < table[i - 1] - MONOTONE_TOLERANCE) {
            return Err(PhotometryError::InvalidResponse(format!(
                "entry {i} decreases ({} < {})",
                table[i],
                table[i - 1]
            )));
        }
        Ok(Self { table })
    }

    /// Response of an ideal linear sensor, `G(i) = ln(i / 128)`. Level 0
    /// is placed at half a step so the table stays finite.
    pub fn linear() -> Self {
        Self::gamma(1.0)
    }

    /// Response of a power-law sensor, `I = 255 * x^(1/gamma)`.
    pub fn gamma(gamma: f64) -> Self {
        let anchor = RESPONSE_ANCHOR as f64;
        let table = (0..256).map(|i| gamma * ((i as f64).max(0.5) / anchor).ln()).collect();
        Self { table }
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// `G(i)`.
    #[inline]
    pub fn log_exposure(&self, intensity: u8) -> f64 {
        self.table[usize::from(intensity)]
    }

    /// `G⁻¹(x)`: the largest intensity whose table entry is `<= x`, or 0 when
    /// `x` is below the whole table.
    pub fn intensity(&self, log_exposure: f64) -> u8 {
        let count = self.table.partition_point(|&g| g <= log_exposure);
        count.saturating_sub(1) as u8
    }

    /// Lookup table re-exposing every level by `shift` in log units.
    pub fn shift_lut(&self, shift: f64) -> [u8; 256] {
        let mut lut = [0u8; 256];
        for (i, out) in lut.iter_mut().enumerate() {
            *out = self.intensity(self.table[i] + shift);
        }
        lut
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(256 * 24);
        for v in &self.table {
            writeln!(out, "{v}").expect("writing to a String");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|message| PhotometryError::ResponseFile {
            path: path.display().to_string(),
            message,
        })
    }

    /// Parses the plain-text form: exactly 256 lines, line `i` holding `G(i)`.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let lines: Vec<&str> = text.strip_suffix('\n').unwrap_or(text).split('\n').collect();
        if lines.len() != 256 {
            return Err(format!("expected 256 lines, found {}", lines.len()));
        }
        let mut table = Vec::with_capacity(256);
        for (i, line) in lines.iter().enumerate() {
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|e| format!("line {}: cannot parse {line:?}: {e}", i + 1))?;
            table.push(v);
        }
        Self::from_table(table).map_err(|e| e.to_string())
    }
}

/// Re-exposes `seed` from its own exposure to `target_us`:
/// `I1 = clamp(G⁻¹(G(I0) - ln e0 + ln e1))`.
pub fn synthesize(seed: &Image, target_us: f64, response: &CameraResponse) -> Result<Image> {
    let exposure = Exposure::from_composite(target_us)?;
    let shift = target_us.ln() - seed.exposure.composite().ln();
    let lut = response.shift_lut(shift);
    Ok(seed.map_lut(&lut, exposure))
}

/// Knobs of the least-squares response recovery.
#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub sample_sites: usize,
    /// Initial smoothness weight. It is doubled, up to
    /// `SMOOTHNESS_DOUBLINGS` times, while the solution is not monotone.
    pub smoothness: f64,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { sample_sites: 256, smoothness: 5.0, seed: 0 }
    }
}

pub const SMOOTHNESS_DOUBLINGS: u32 = 4;
const MIN_SITES: usize = 50;
const MIN_DECILES: usize = 5;

/// Unclipped levels (1..=254) present anywhere in `stacks`. Only these
/// entries of a recovered response are constrained by data.
pub fn observed_levels(stacks: &[Vec<Image>]) -> Vec<usize> {
    let mut seen = [false; 256];
    for img in stacks.iter().flatten() {
        for &v in img.data() {
            seen[usize::from(v)] = true;
        }
    }
    (1..=254).filter(|&z| seen[z]).collect()
}

/// RMS difference of two responses over `levels` after removing their
/// mean offset, which the gauge leaves undetermined.
pub fn aligned_rmse(a: &CameraResponse, b: &CameraResponse, levels: &[usize]) -> f64 {
    if levels.is_empty() {
        return f64::NAN;
    }
    let diffs: Vec<f64> = levels.iter().map(|&z| a.table[z] - b.table[z]).collect();
    let offset = diffs.iter().sum::<f64>() / diffs.len() as f64;
    (diffs.iter().map(|d| (d - offset).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt()
}

/// Triangle weighting of intensity levels; zero at both clip levels.
#[inline]
fn level_weight(z: u8) -> f64 {
    f64::from(z.min(255 - z))
}

/// Recovers `G` from groups of registered images of a static scene taken at
/// different exposures.
///
/// Pixel sites are drawn per group by stratified sampling over the
/// intensities of the median-exposure image. The solution minimises the
/// weighted data residuals `w(z) (G(z) - ln E - ln e)` plus a
/// second-difference smoothness penalty, with the gauge fixed at
/// `G(128) = 0`. Clipped samples are left out.
pub fn calibrate_crf(stacks: &[Vec<Image>], options: &CalibrationOptions) -> Result<CameraResponse> {
    if stacks.is_empty() {
        return Err(PhotometryError::RankDeficient("no image stacks supplied".into()));
    }
    for (s, stack) in stacks.iter().enumerate() {
        if stack.len() < 2 {
            return Err(PhotometryError::RankDeficient(format!(
                "stack {s} holds {} image(s), at least 2 exposures are needed",
                stack.len()
            )));
        }
        let (w, h) = (stack[0].width(), stack[0].height());
        if stack.iter().any(|img| img.width() != w || img.height() != h) {
            return Err(PhotometryError::CalibrationFailed(format!(
                "stack {s} mixes image sizes"
            )));
        }
        let e0 = stack[0].exposure.composite();
        if stack.iter().all(|img| (img.exposure.composite() - e0).abs() <= 1e-12 * e0) {
            return Err(PhotometryError::RankDeficient(format!(
                "stack {s} has a single distinct exposure"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let per_stack = options.sample_sites.div_ceil(stacks.len());
    // (stack index, pixel index)
    let mut sites: Vec<(usize, usize)> = Vec::new();
    let mut deciles = [false; 10];
    for (s, stack) in stacks.iter().enumerate() {
        for pixel in stratified_sites(stack, per_stack, &mut rng) {
            let informative = stack.iter().any(|img| level_weight(img.data()[pixel]) > 0.0);
            if informative {
                let z = reference_image(stack).data()[pixel];
                deciles[(usize::from(z) * 10 / 256).min(9)] = true;
                sites.push((s, pixel));
            }
        }
    }
    let covered = deciles.iter().filter(|&&d| d).count();
    if sites.len() < MIN_SITES || covered < MIN_DECILES {
        return Err(PhotometryError::RankDeficient(format!(
            "{} usable sites over {covered} intensity deciles (need {MIN_SITES} over {MIN_DECILES})",
            sites.len()
        )));
    }

    let mut smoothness = options.smoothness;
    let mut last = None;
    for _ in 0..=SMOOTHNESS_DOUBLINGS {
        let table = solve_response(stacks, &sites, smoothness)?;
        match (1..256).find(|&k| table[k] < table[k - 1] - MONOTONE_TOLERANCE) {
            None => return CameraResponse::from_table(table),
            Some(k) => last = Some(k),
        }
        smoothness *= 2.0;
    }
    Err(PhotometryError::CalibrationFailed(format!(
        "recovered response decreases at level {} even with smoothness {}",
        last.expect("at least one attempt"),
        smoothness / 2.0
    )))
}

/// Weighted least-squares solve for the response table at one smoothness.
fn solve_response(stacks: &[Vec<Image>], sites: &[(usize, usize)], smoothness: f64) -> Result<Vec<f64>> {
    // Columns: G(0..256) without the anchor, then ln E per site.
    let col_of_level = |z: usize| -> Option<usize> {
        match z.cmp(&RESPONSE_ANCHOR) {
            std::cmp::Ordering::Less => Some(z),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(z - 1),
        }
    };
    let n_levels = 255;
    let n_cols = n_levels + sites.len();
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for (j, &(s, pixel)) in sites.iter().enumerate() {
        for img in &stacks[s] {
            let z = img.data()[pixel];
            let w = level_weight(z);
            if w == 0.0 {
                continue;
            }
            let mut entries = vec![(n_levels + j, -w)];
            if let Some(c) = col_of_level(usize::from(z)) {
                entries.push((c, w));
            }
            rows.push((entries, w * img.exposure.composite().ln()));
        }
    }
    for k in 1..255usize {
        let w = smoothness * level_weight(k as u8);
        let entries: Vec<(usize, f64)> = [(k - 1, w), (k, -2.0 * w), (k + 1, w)]
            .into_iter()
            .filter_map(|(z, v)| col_of_level(z).map(|c| (c, v)))
            .collect();
        rows.push((entries, 0.0));
    }

    let mut a = DMatrix::<f64>::zeros(rows.len(), n_cols);
    let mut b = DVector::<f64>::zeros(rows.len());
    for (r, (entries, rhs)) in rows.iter().enumerate() {
        for &(c, v) in entries {
            a[(r, c)] += v;
        }
        b[r] = *rhs;
    }
    if rows.len() < n_cols {
        return Err(PhotometryError::RankDeficient(format!(
            "{} equations for {n_cols} unknowns",
            rows.len()
        )));
    }

    let qr = a.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diag_min = r.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(diag_min > 1e-10 * diag_max) {
        return Err(PhotometryError::RankDeficient(format!(
            "triangular factor is singular (min/max pivot {diag_min:e}/{diag_max:e})"
        )));
    }
    let qtb = qr.q().transpose() * b;
    let x = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| PhotometryError::RankDeficient("back substitution failed".into()))?;

    let mut table = vec![0.0; 256];
    for (z, g) in table.iter_mut().enumerate() {
        if let Some(c) = col_of_level(z) {
            *g = x[c];
        }
    }
    Ok(table)
}

/// The image with the median exposure of a stack.
fn reference_image(stack: &[Image]) -> &Image {
    let mut order: Vec<usize> = (0..stack.len()).collect();
    order.sort_by(|&a, &b| {
        stack[a].exposure.composite().total_cmp(&stack[b].exposure.composite())
    });
    &stack[order[order.len() / 2]]
}

/// Picks up to `count` pixel indices spread evenly over the intensity range
/// of the reference image.
fn stratified_sites(stack: &[Image], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let reference = reference_image(stack);
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, &v) in reference.data().iter().enumerate() {
        by_level[usize::from(v)].push(i);
    }
    let strata = count.max(1);
    let mut picked = Vec::with_capacity(count);
    for s in 0..strata {
        let lo = s * 256 / strata;
        let hi = ((s + 1) * 256 / strata).max(lo + 1);
        let pool: Vec<usize> = (lo..hi.min(256)).flat_map(|z| by_level[z].iter().copied()).collect();
        if let Some(&p) = pool.choose(rng) {
            picked.push(p);
        }
    }
    // Levels missing from the reference leave gaps; top up from the whole image.
    if picked.len() < count {
        let mut all: Vec<usize> = (0..reference.data().len()).collect();
        all.shuffle(rng);
        for p in all {
            if picked.len() >= count {
                break;
            }
            if !picked.contains(&p) {
                picked.push(p);
            }
        }
    }
    picked
}
