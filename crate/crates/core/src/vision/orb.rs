//! Oriented FAST keypoints with rotated BRIEF descriptors.

use super::pattern::BRIEF_PATTERN;
use crate::photometry::Image;

/// Bresenham circle of radius 3 used by the FAST segment test.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
];
const FAST_ARC: usize = 9;
/// Radius of the orientation patch.
const PATCH_RADIUS: i32 = 15;
const HARRIS_BLOCK: i32 = 7;
const HARRIS_K: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OrbConfig {
    pub levels: usize,
    pub scale_factor: f64,
    pub fast_threshold: u8,
    /// Threshold retried in grid cells where the main one finds nothing.
    pub fast_min_threshold: u8,
    pub grid_cols: usize,
    pub grid_rows: usize,
    /// Keypoints closer than this to a level border are dropped.
    pub edge_threshold: usize,
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            scale_factor: 1.2,
            fast_threshold: 20,
            fast_min_threshold: 7,
            grid_cols: 8,
            grid_rows: 6,
            edge_threshold: 19,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Position in full-resolution pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub response: f64,
    /// Radians, counter-clockwise in image coordinates (y down).
    pub orientation: f64,
    pub level: usize,
}

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn bit(&self, k: usize) -> bool {
        self.0[k / 64] >> (k % 64) & 1 == 1
    }
}

/// Keypoints with their descriptors, index-aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Plane {
    #[inline]
    fn at(&self, x: i32, y: i32) -> u8 {
        self.data[y as usize * self.width + x as usize]
    }
}

/// Area-averaging resize of a raw plane.
fn downscale(src: &Plane, width: usize, height: usize) -> Plane {
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    let spans = |scale: f64, out: usize, len: usize| -> Vec<Vec<(usize, f64)>> {
        (0..out)
            .map(|o| {
                let (a, b) = (o as f64 * scale, (o as f64 + 1.0) * scale);
                (a.floor() as usize..(b.ceil() as usize).min(len))
                    .map(|s| (s, (b.min(s as f64 + 1.0) - a.max(s as f64)).max(0.0)))
                    .filter(|&(_, w)| w > 1e-12)
                    .collect()
            })
            .collect()
    };
    let cols = spans(sx, width, src.width);
    let rows = spans(sy, height, src.height);
    let mut data = Vec::with_capacity(width * height);
    for row in &rows {
        for col in &cols {
            let (mut acc, mut total) = (0.0, 0.0);
            for &(y, wy) in row {
                for &(x, wx) in col {
                    acc += wy * wx * f64::from(src.data[y * src.width + x]);
                    total += wy * wx;
                }
            }
            data.push((acc / total).round() as u8);
        }
    }
    Plane { width, height, data }
}

/// Separable Gaussian blur, 7 taps, sigma 2, replicated borders.
fn gaussian_blur(src: &Plane) -> Plane {
    let sigma = 2.0f64;
    let taps: Vec<f64> = (-3..=3).map(|i: i32| (-(f64::from(i * i)) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let (w, h) = (src.width as i32, src.height as i32);
    let mut tmp = vec![0.0f64; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = (x + k as i32 - 3).clamp(0, w - 1);
                acc += t * f64::from(src.at(xx, y));
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut data = vec![0u8; src.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = (y + k as i32 - 3).clamp(0, h - 1);
                acc += t * tmp[(yy * w + x) as usize];
            }
            data[(y * w + x) as usize] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    Plane { width: src.width, height: src.height, data }
}

/// FAST-9 segment test: nine contiguous circle pixels all brighter than
/// `p + t` or all darker than `p - t`.
fn is_fast_corner(plane: &Plane, x: i32, y: i32, threshold: u8) -> bool {
    let p = i32::from(plane.at(x, y));
    let t = i32::from(threshold);
    let ring: [i32; 16] = std::array::from_fn(|k| i32::from(plane.at(x + CIRCLE[k].0, y + CIRCLE[k].1)));
    // Any 9-arc covers at least two of the four compass points.
    let compass = [ring[0], ring[4], ring[8], ring[12]];
    let bright = compass.iter().filter(|&&v| v > p + t).count();
    let dark = compass.iter().filter(|&&v| v < p - t).count();
    if bright < 2 && dark < 2 {
        return false;
    }
    for sign in [1i32, -1] {
        let mut run = 0;
        for k in 0..16 + FAST_ARC {
            if sign * (ring[k % 16] - p) > t {
                run += 1;
                if run >= FAST_ARC {
                    return true;
                }
            } else {
                run = 0;
            }
        }
    }
    false
}

fn harris_response(plane: &Plane, x: i32, y: i32) -> f64 {
    let r = HARRIS_BLOCK / 2;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for yy in y - r..=y + r {
        for xx in x - r..=x + r {
            let v = |dx: i32, dy: i32| f64::from(plane.at(xx + dx, yy + dy));
            let gx = (v(1, -1) + 2.0 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2.0 * v(-1, 0) + v(-1, 1));
            let gy = (v(-1, 1) + 2.0 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2.0 * v(0, -1) + v(1, -1));
            let (gx, gy) = (gx / (4.0 * 255.0), gy / (4.0 * 255.0));
            a += gx * gx;
            b += gx * gy;
            c += gy * gy;
        }
    }
    a * c - b * b - HARRIS_K * (a + c) * (a + c)
}

/// Orientation from the intensity centroid of a disc of radius 15.
fn centroid_angle(plane: &Plane, x: i32, y: i32) -> f64 {
    let (mut m01, mut m10) = (0.0, 0.0);
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        let half = f64::from(PATCH_RADIUS * PATCH_RADIUS - dy * dy).sqrt().floor() as i32;
        for dx in -half..=half {
            let v = f64::from(plane.at(x + dx, y + dy));
            m10 += f64::from(dx) * v;
            m01 += f64::from(dy) * v;
        }
    }
    m01.atan2(m10)
}

fn describe(blurred: &Plane, x: i32, y: i32, angle: f64) -> Descriptor {
    let (s, c) = angle.sin_cos();
    let mut bits = [0u64; 4];
    for k in 0..256 {
        let sample = |(px, py): (i32, i32)| {
            let (px, py) = (f64::from(px), f64::from(py));
            let rx = (px * c - py * s).round() as i32;
            let ry = (px * s + py * c).round() as i32;
            blurred.at(x + rx, y + ry)
        };
        if sample(BRIEF_PATTERN[2 * k]) < sample(BRIEF_PATTERN[2 * k + 1]) {
            bits[k / 64] |= 1 << (k % 64);
        }
    }
    Descriptor(bits)
}

struct Candidate {
    x: i32,
    y: i32,
    response: f64,
    strong: bool,
}

/// FAST corners of one level with 3×3 non-maximum suppression on the Harris
/// response. `strong` marks corners passing the main threshold.
fn level_candidates(plane: &Plane, config: &OrbConfig) -> Vec<Candidate> {
    let edge = config.edge_threshold as i32;
    let (w, h) = (plane.width as i32, plane.height as i32);
    if w <= 2 * edge || h <= 2 * edge {
        return Vec::new();
    }
    let mut response = vec![f64::NEG_INFINITY; plane.data.len()];
    let mut strong = vec![false; plane.data.len()];
    for y in edge..h - edge {
        for x in edge..w - edge {
            if is_fast_corner(plane, x, y, config.fast_min_threshold) {
                let i = (y * w + x) as usize;
                response[i] = harris_response(plane, x, y);
                strong[i] = is_fast_corner(plane, x, y, config.fast_threshold);
            }
        }
    }
    let mut out = Vec::new();
    for y in edge..h - edge {
        for x in edge..w - edge {
            let i = (y * w + x) as usize;
            let r = response[i];
            if r == f64::NEG_INFINITY {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = ((y + dy) * w + x + dx) as usize;
                    // Ties resolve towards the earlier pixel in raster order.
                    if response[j] > r || (response[j] == r && j < i) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                out.push(Candidate { x, y, response: r, strong: strong[i] });
            }
        }
    }
    out
}

/// Picks up to `budget` candidates spread over a grid: each cell uses its
/// strong corners if it has any, else its weak ones, and cells are visited
/// round-robin in order of decreasing response. Returns (picked, leftovers).
fn bucket(cands: Vec<Candidate>, plane: &Plane, config: &OrbConfig, budget: usize) -> (Vec<Candidate>, Vec<Candidate>) {
    let (cols, rows) = (config.grid_cols.max(1), config.grid_rows.max(1));
    let mut cells: Vec<Vec<Candidate>> = (0..cols * rows).map(|_| Vec::new()).collect();
    for c in cands {
        let cx = (c.x as usize * cols / plane.width).min(cols - 1);
        let cy = (c.y as usize * rows / plane.height).min(rows - 1);
        cells[cy * cols + cx].push(c);
    }
    let mut leftovers = Vec::new();
    for cell in &mut cells {
        if cell.iter().any(|c| c.strong) {
            let (keep, weak): (Vec<_>, Vec<_>) = cell.drain(..).partition(|c| c.strong);
            *cell = keep;
            leftovers.extend(weak);
        }
        // Descending response; pop() then yields the best.
        cell.sort_by(|a, b| a.response.total_cmp(&b.response));
    }
    let mut picked = Vec::new();
    while picked.len() < budget {
        let mut round: Vec<Candidate> = cells.iter_mut().filter_map(Vec::pop).collect();
        if round.is_empty() {
            break;
        }
        round.sort_by(|a, b| b.response.total_cmp(&a.response));
        let room = budget - picked.len();
        if round.len() > room {
            leftovers.extend(round.drain(room..));
        }
        picked.extend(round);
    }
    leftovers.extend(cells.into_iter().flatten());
    (picked, leftovers)
}

/// ORB features with the default configuration.
pub fn detect_features(img: &Image, max_features: usize) -> Features {
    detect_features_with(img, max_features, &OrbConfig::default())
}

pub fn detect_features_with(img: &Image, max_features: usize, config: &OrbConfig) -> Features {
    if max_features == 0 || img.width() == 0 || img.height() == 0 {
        return Features::default();
    }
    let levels = config.levels.max(1);
    let inv = 1.0 / config.scale_factor;
    // Per-level budget proportional to the inverse scale.
    let weights: Vec<f64> = (0..levels).map(|l| inv.powi(l as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut budgets: Vec<usize> = weights.iter().map(|w| (max_features as f64 * w / total).round() as usize).collect();
    let assigned: usize = budgets[1..].iter().sum();
    budgets[0] = max_features.saturating_sub(assigned);

    let mut plane = Plane { width: img.width(), height: img.height(), data: img.data().to_vec() };
    let mut chosen: Vec<(Candidate, usize)> = Vec::new();
    let mut spare: Vec<(Candidate, usize)> = Vec::new();
    let mut planes = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            let scale = config.scale_factor.powi(level as i32);
            let w = (img.width() as f64 / scale).round() as usize;
            let h = (img.height() as f64 / scale).round() as usize;
            if w == 0 || h == 0 {
                break;
            }
            plane = downscale(&plane, w, h);
        }
        let cands = level_candidates(&plane, config);
        let (picked, rest) = bucket(cands, &plane, config, budgets[level]);
        chosen.extend(picked.into_iter().map(|c| (c, level)));
        spare.extend(rest.into_iter().map(|c| (c, level)));
        planes.push(plane.clone());
    }
    if chosen.len() < max_features {
        spare.sort_by(|a, b| b.0.response.total_cmp(&a.0.response));
        spare.truncate(max_features - chosen.len());
        chosen.extend(spare);
    }

    let blurred: Vec<Plane> = planes.iter().map(gaussian_blur).collect();
    let mut features = Features::default();
    for (c, level) in chosen {
        let angle = centroid_angle(&planes[level], c.x, c.y);
        let scale = config.scale_factor.powi(level as i32);
        features.keypoints.push(Keypoint {
            x: f64::from(c.x) * scale,
            y: f64::from(c.y) * scale,
            response: c.response,
            orientation: angle,
            level,
        });
        features.descriptors.push(describe(&blurred[level], c.x, c.y, angle));
    }
    features
}
