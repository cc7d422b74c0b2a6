//! Robust planar homography between matched keypoints.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matching::Match;
use super::orb::Keypoint;
use super::VisionError;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RansacConfig {
    /// Per-direction transfer error bound, pixels.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold_px: 3.0, confidence: 0.99, max_iterations: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyEstimate {
    /// Maps points of image A to image B.
    pub h: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

impl HomographyEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Similarity transform moving the centroid to the origin and the mean
/// distance to √2.
pub(crate) fn normalizing_transform(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

pub(crate) fn apply(m: &Matrix3<f64>, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    (v.z.abs() > 1e-12).then(|| Vector2::new(v.x / v.z, v.y / v.z))
}

/// Null vector of `a` (the right singular vector of the smallest singular
/// value). Rows are zero-padded to at least 9 so the full basis exists.
pub(crate) fn null_vector(mut a: DMatrix<f64>) -> Option<nalgebra::DVector<f64>> {
    let cols = a.ncols();
    if a.nrows() < cols {
        a = a.resize_vertically(cols, 0.0);
    }
    let svd = a.try_svd(false, true, 1e-14, 500)?;
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Some(v_t.row(idx).transpose())
}

/// Normalised direct linear transform over ≥ 4 correspondences.
pub fn fit_homography(pa: &[Vector2<f64>], pb: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if pa.len() < 4 || pa.len() != pb.len() {
        return None;
    }
    let ta = normalizing_transform(pa);
    let tb = normalizing_transform(pb);
    let mut a = DMatrix::zeros(2 * pa.len(), 9);
    for (i, (p, q)) in pa.iter().zip(pb).enumerate() {
        let p = apply(&ta, p)?;
        let q = apply(&tb, q)?;
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let h = null_vector(a)?;
    let hn = Matrix3::from_row_slice(h.as_slice());
    let h = tb.try_inverse()? * hn * ta;
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(normalize_scale(h))
}

fn normalize_scale(h: Matrix3<f64>) -> Matrix3<f64> {
    if h[(2, 2)].abs() > 1e-12 {
        h / h[(2, 2)]
    } else {
        h / h.norm()
    }
}

/// Squared forward and backward transfer errors of one correspondence.
pub(crate) fn transfer_errors(h: &Matrix3<f64>, h_inv: &Matrix3<f64>, p: &Vector2<f64>, q: &Vector2<f64>) -> (f64, f64) {
    let fwd = apply(h, p).map_or(f64::INFINITY, |m| (m - q).norm_squared());
    let bwd = apply(h_inv, q).map_or(f64::INFINITY, |m| (m - p).norm_squared());
    (fwd, bwd)
}

fn inlier_mask(h: &Matrix3<f64>, pa: &[Vector2<f64>], pb: &[Vector2<f64>], thresh_sq: f64) -> Vec<bool> {
    let Some(h_inv) = h.try_inverse() else {
        return vec![false; pa.len()];
    };
    pa.iter()
        .zip(pb)
        .map(|(p, q)| {
            let (f, b) = transfer_errors(h, &h_inv, p, q);
            f <= thresh_sq && b <= thresh_sq
        })
        .collect()
}

/// RANSAC over point correspondences.
pub fn ransac_homography_points(
    pa: &[Vector2<f64>],
    pb: &[Vector2<f64>],
    config: &RansacConfig,
) -> Result<HomographyEstimate, VisionError> {
    let n = pa.len();
    if n < 4 || n != pb.len() {
        return Err(VisionError::EstimationFailed(format!("{n} correspondences, need at least 4")));
    }
    let thresh_sq = config.threshold_px * config.threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    let mut needed = config.max_iterations;
    let mut iter = 0;
    while iter < needed.min(config.max_iterations) {
        iter += 1;
        let idx = sample(&mut rng, n, 4);
        let sa: Vec<_> = idx.iter().map(|i| pa[i]).collect();
        let sb: Vec<_> = idx.iter().map(|i| pb[i]).collect();
        let Some(h) = fit_homography(&sa, &sb) else { continue };
        let mask = inlier_mask(&h, pa, pb, thresh_sq);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            let w = count as f64 / n as f64;
            let p_fail = 1.0 - w.powi(4);
            needed = if p_fail <= 1e-12 {
                0
            } else {
                ((1.0 - config.confidence).ln() / p_fail.ln()).ceil().max(0.0) as usize
            };
            best = Some((count, mask));
        }
    }
    let (count, mask) = best.ok_or_else(|| VisionError::EstimationFailed("no non-degenerate sample".into()))?;
    if count < 4 {
        return Err(VisionError::EstimationFailed(format!("best model has {count} inliers")));
    }
    let ia: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| pa[i]).collect();
    let ib: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| pb[i]).collect();
    let h = fit_homography(&ia, &ib).ok_or_else(|| VisionError::EstimationFailed("refit on inliers failed".into()))?;
    let refit_mask = inlier_mask(&h, pa, pb, thresh_sq);
    let refit_count = refit_mask.iter().filter(|&&b| b).count();
    if refit_count < 4 {
        return Err(VisionError::EstimationFailed(format!("refit model has {refit_count} inliers")));
    }
    Ok(HomographyEstimate { h, inliers: refit_mask })
}

/// RANSAC homography from keypoint matches of image A to image B. The
/// inlier mask is aligned with `matches`.
pub fn ransac_homography(
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    config: &RansacConfig,
) -> Result<HomographyEstimate, VisionError> {
    let (pa, pb) = match_points(matches, kps_a, kps_b);
    ransac_homography_points(&pa, &pb, config)
}

pub(crate) fn match_points(matches: &[Match], kps_a: &[Keypoint], kps_b: &[Keypoint]) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
    matches
        .iter()
        .map(|m| {
            let a = &kps_a[m.index_a];
            let b = &kps_b[m.index_b];
            (Vector2::new(a.x, a.y), Vector2::new(b.x, b.y))
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector2<f64>> {
        (0..n).map(|_| Vector2::new(rng.random_range(0.0..500.0), rng.random_range(0.0..380.0))).collect()
    }

    #[test]
    fn recovers_exact_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pa = grid_points(&mut rng, 60);
        let pb: Vec<_> = pa.iter().map(|p| p + Vector2::new(5.0, -3.0)).collect();
        let est = ransac_homography_points(&pa, &pb, &RansacConfig::default()).unwrap();
        let expected = Matrix3::new(1.0, 0.0, 5.0, 0.0, 1.0, -3.0, 0.0, 0.0, 1.0);
        assert!((est.h - expected).amax() < 1e-6, "{}", est.h);
        assert_eq!(est.inlier_count(), 60);
    }

    #[test]
    fn rejects_planted_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pa = grid_points(&mut rng, 100);
        let mut pb: Vec<_> = pa.iter().map(|p| p + Vector2::new(5.0, -3.0)).collect();
        let outliers: Vec<usize> = (0..100).filter(|i| i % 10 < 3).collect();
        for &i in &outliers {
            pb[i] += Vector2::new(rng.random_range(20.0..80.0), rng.random_range(-80.0..-20.0));
        }
        let est = ransac_homography_points(&pa, &pb, &RansacConfig::default()).unwrap();
        let expected = Matrix3::new(1.0, 0.0, 5.0, 0.0, 1.0, -3.0, 0.0, 0.0, 1.0);
        assert!((est.h - expected).amax() < 1e-3);
        for i in 0..100 {
            assert_eq!(est.inliers[i], !outliers.contains(&i));
        }
        let again = ransac_homography_points(&pa, &pb, &RansacConfig::default()).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn three_matches_fail() {
        let pa = vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0)];
        assert!(matches!(
            ransac_homography_points(&pa, &pa, &RansacConfig::default()),
            Err(VisionError::EstimationFailed(_))
        ));
    }

    #[test]
    fn projective_map_is_recovered() {
        let h_true = Matrix3::new(1.1, 0.05, -4.0, -0.03, 0.95, 7.0, 1e-4, -2e-4, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pa = grid_points(&mut rng, 40);
        let pb: Vec<_> = pa.iter().map(|p| apply(&h_true, p).unwrap()).collect();
        let h = fit_homography(&pa, &pb).unwrap();
        assert!((h - h_true).amax() < 1e-8);
    }
}
