//! Relative camera motion from two views.
//!
//! Homography and fundamental matrix are both fitted inside one RANSAC loop
//! on shared 8-point samples and scored with chi-square truncated residuals.
//! The homography wins when it explains more than 45% of the combined
//! score; the winner is decomposed into motion hypotheses and the one that
//! places the most triangulated points in front of both cameras is kept.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::homography::{apply, fit_homography, match_points, normalizing_transform, null_vector, transfer_errors};
use super::matching::Match;
use super::orb::Keypoint;
use super::{So3, VisionError};
use crate::scene::Intrinsics;

/// Pixel noise assumed by the scores.
const SIGMA: f64 = 1.0;
/// Chi-square 95% bounds for 1 and 2 degrees of freedom.
const CHI2_1DOF: f64 = 3.841;
const CHI2_2DOF: f64 = 5.991;
const HOMOGRAPHY_RATIO: f64 = 0.45;
const ITERATIONS: usize = 200;
/// Squared reprojection bound for a triangulated point to count.
const REPROJ_SQ: f64 = 4.0 * SIGMA * SIGMA;
/// Singular values of the calibrated homography this close together mean
/// the motion is a pure rotation.
const ROTATION_ONLY_TOL: f64 = 1e-4;
const MIN_MATCHES: usize = 8;

/// Motion of camera B expressed in the frame of camera A.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub rotation: So3,
    /// Unit length, or zero when `degenerate_translation` is set.
    pub translation: Vector3<f64>,
    pub inlier_count: usize,
    pub mean_reproj_error: f64,
    pub degenerate_translation: bool,
    pub used_homography: bool,
}

fn fit_fundamental(pa: &[Vector2<f64>], pb: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if pa.len() < 8 {
        return None;
    }
    let ta = normalizing_transform(pa);
    let tb = normalizing_transform(pb);
    let mut a = DMatrix::zeros(pa.len(), 9);
    for (i, (p, q)) in pa.iter().zip(pb).enumerate() {
        let p = apply(&ta, p)?;
        let q = apply(&tb, q)?;
        let row = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let f = Matrix3::from_row_slice(null_vector(a)?.as_slice());
    let svd = f.svd(true, true);
    let mut s = svd.singular_values;
    s[2] = 0.0;
    let f = svd.u? * Matrix3::from_diagonal(&s) * svd.v_t?;
    let f = tb.transpose() * f * ta;
    f.iter().all(|v| v.is_finite()).then(|| f / f.norm())
}

/// Score and inlier mask of a homography.
fn score_homography(h: &Matrix3<f64>, pa: &[Vector2<f64>], pb: &[Vector2<f64>]) -> (f64, Vec<bool>) {
    let Some(h_inv) = h.try_inverse() else {
        return (0.0, vec![false; pa.len()]);
    };
    let inv_sigma_sq = 1.0 / (SIGMA * SIGMA);
    let mut score = 0.0;
    let mask = pa
        .iter()
        .zip(pb)
        .map(|(p, q)| {
            let (fwd, bwd) = transfer_errors(h, &h_inv, p, q);
            let mut inlier = true;
            for chi in [fwd * inv_sigma_sq, bwd * inv_sigma_sq] {
                if chi > CHI2_2DOF {
                    inlier = false;
                } else {
                    score += CHI2_2DOF - chi;
                }
            }
            inlier
        })
        .collect();
    (score, mask)
}

/// Score and inlier mask of a fundamental matrix (`q^T F p = 0`).
fn score_fundamental(f: &Matrix3<f64>, pa: &[Vector2<f64>], pb: &[Vector2<f64>]) -> (f64, Vec<bool>) {
    let inv_sigma_sq = 1.0 / (SIGMA * SIGMA);
    let mut score = 0.0;
    let mask = pa
        .iter()
        .zip(pb)
        .map(|(p, q)| {
            let ph = Vector3::new(p.x, p.y, 1.0);
            let qh = Vector3::new(q.x, q.y, 1.0);
            let mut inlier = true;
            for (line, pt) in [(f * ph, qh), (f.transpose() * qh, ph)] {
                let denom = line.x * line.x + line.y * line.y;
                let chi = if denom > 0.0 { line.dot(&pt).powi(2) / denom * inv_sigma_sq } else { f64::INFINITY };
                if chi > CHI2_1DOF {
                    inlier = false;
                } else {
                    score += CHI2_2DOF - chi;
                }
            }
            inlier
        })
        .collect();
    (score, mask)
}

/// Linear triangulation of one correspondence.
fn triangulate(p1: &Matrix3x4<f64>, p2: &Matrix3x4<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> Option<Vector3<f64>> {
    let mut m = Matrix4::zeros();
    m.set_row(0, &(p1.row(2) * a.x - p1.row(0)));
    m.set_row(1, &(p1.row(2) * a.y - p1.row(1)));
    m.set_row(2, &(p2.row(2) * b.x - p2.row(0)));
    m.set_row(3, &(p2.row(2) * b.y - p2.row(1)));
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd.singular_values.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1))?;
    let x = v_t.row(idx);
    if x[3].abs() < 1e-12 {
        return None;
    }
    let point = Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]);
    point.iter().all(|v| v.is_finite()).then_some(point)
}

struct Hypothesis {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

struct Check {
    good: usize,
    mean_error: f64,
}

/// Counts inliers triangulated in front of both cameras with small
/// reprojection error, for camera B at `x_b = R x_a + t`.
fn check_motion(h: &Hypothesis, k: &Matrix3<f64>, pa: &[Vector2<f64>], pb: &[Vector2<f64>], mask: &[bool]) -> Check {
    let mut p1 = Matrix3x4::zeros();
    p1.fixed_view_mut::<3, 3>(0, 0).copy_from(k);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&h.rotation);
    rt.set_column(3, &h.translation);
    let p2 = k * rt;
    let project = |x: &Vector3<f64>| Vector2::new(k[(0, 0)] * x.x / x.z + k[(0, 2)], k[(1, 1)] * x.y / x.z + k[(1, 2)]);
    let mut good = 0;
    let mut err_sum = 0.0;
    for i in (0..pa.len()).filter(|&i| mask[i]) {
        let Some(x) = triangulate(&p1, &p2, &pa[i], &pb[i]) else { continue };
        let xb = h.rotation * x + h.translation;
        if x.z <= 0.0 || xb.z <= 0.0 {
            continue;
        }
        let ea = (project(&x) - pa[i]).norm_squared();
        let eb = (project(&xb) - pb[i]).norm_squared();
        if ea > REPROJ_SQ || eb > REPROJ_SQ {
            continue;
        }
        good += 1;
        err_sum += 0.5 * (ea.sqrt() + eb.sqrt());
    }
    Check { good, mean_error: if good > 0 { err_sum / good as f64 } else { f64::INFINITY } }
}

fn proper(m: Matrix3<f64>) -> Matrix3<f64> {
    if m.determinant() < 0.0 {
        -m
    } else {
        m
    }
}

/// Four (R, t) candidates of an essential matrix.
fn essential_hypotheses(e: &Matrix3<f64>) -> Vec<Hypothesis> {
    let svd = e.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else { return Vec::new() };
    let (u, v_t) = (proper(u), proper(v_t));
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t: Vector3<f64> = u.column(2).into();
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    vec![
        Hypothesis { rotation: r1, translation: t },
        Hypothesis { rotation: r1, translation: -t },
        Hypothesis { rotation: r2, translation: t },
        Hypothesis { rotation: r2, translation: -t },
    ]
}

enum HomographyMotion {
    RotationOnly(Matrix3<f64>),
    Hypotheses(Vec<Hypothesis>),
}

/// Decomposition of a calibrated homography `A = R + t nᵀ / d` into its
/// eight (R, t) candidates (Faugeras).
fn homography_hypotheses(a: &Matrix3<f64>) -> Option<HomographyMotion> {
    let svd = a.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let (d1, d2, d3) = (svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]);
    if d3 <= 0.0 || !d1.is_finite() {
        return None;
    }
    if d1 / d3 < 1.0 + ROTATION_ONLY_TOL {
        let r = So3::from_matrix_projected(&(a / d2));
        return Some(HomographyMotion::RotationOnly(*r.matrix()));
    }
    let s = u.determinant() * v_t.determinant();
    let (d1s, d2s, d3s) = (d1 * d1, d2 * d2, d3 * d3);
    let aux1 = ((d1s - d2s) / (d1s - d3s)).max(0.0).sqrt();
    let aux3 = ((d2s - d3s) / (d1s - d3s)).max(0.0).sqrt();
    let x1 = [aux1, aux1, -aux1, -aux1];
    let x3 = [aux3, -aux3, aux3, -aux3];
    let mut out = Vec::with_capacity(8);

    // d' = d2
    let aux_s = ((d1s - d2s) * (d2s - d3s)).max(0.0).sqrt() / ((d1 + d3) * d2);
    let c = (d2s + d1 * d3) / ((d1 + d3) * d2);
    let sines = [aux_s, -aux_s, -aux_s, aux_s];
    for i in 0..4 {
        let rp = Matrix3::new(c, 0.0, -sines[i], 0.0, 1.0, 0.0, sines[i], 0.0, c);
        let r = u * rp * v_t * s;
        let tp = Vector3::new(x1[i], 0.0, -x3[i]) * (d1 - d3);
        let t = u * tp;
        out.push(Hypothesis { rotation: r, translation: t / t.norm().max(1e-300) });
    }

    // d' = -d2
    let aux_s = ((d1s - d2s) * (d2s - d3s)).max(0.0).sqrt() / ((d1 - d3) * d2);
    let c = (d1 * d3 - d2s) / ((d1 - d3) * d2);
    let sines = [aux_s, -aux_s, -aux_s, aux_s];
    for i in 0..4 {
        let rp = Matrix3::new(c, 0.0, sines[i], 0.0, -1.0, 0.0, sines[i], 0.0, -c);
        let r = u * rp * v_t * s;
        let tp = Vector3::new(x1[i], 0.0, x3[i]) * (d1 + d3);
        let t = u * tp;
        out.push(Hypothesis { rotation: r, translation: t / t.norm().max(1e-300) });
    }
    Some(HomographyMotion::Hypotheses(out))
}

/// Two-view motion from point correspondences (pixel coordinates).
pub fn two_view_pose_points(
    pa: &[Vector2<f64>],
    pb: &[Vector2<f64>],
    intrinsics: &Intrinsics,
    seed: u64,
) -> Result<PoseEstimate, VisionError> {
    let n = pa.len();
    if n < MIN_MATCHES || pb.len() != n {
        return Err(VisionError::EstimationFailed(format!("{n} matches, need at least {MIN_MATCHES}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_h: Option<(f64, Matrix3<f64>, Vec<bool>)> = None;
    let mut best_f: Option<(f64, Matrix3<f64>, Vec<bool>)> = None;
    for _ in 0..ITERATIONS {
        let idx = sample(&mut rng, n, MIN_MATCHES);
        let sa: Vec<_> = idx.iter().map(|i| pa[i]).collect();
        let sb: Vec<_> = idx.iter().map(|i| pb[i]).collect();
        if let Some(h) = fit_homography(&sa, &sb) {
            let (score, mask) = score_homography(&h, pa, pb);
            if best_h.as_ref().is_none_or(|b| score > b.0) {
                best_h = Some((score, h, mask));
            }
        }
        if let Some(f) = fit_fundamental(&sa, &sb) {
            let (score, mask) = score_fundamental(&f, pa, pb);
            if best_f.as_ref().is_none_or(|b| score > b.0) {
                best_f = Some((score, f, mask));
            }
        }
        if n == MIN_MATCHES {
            break;
        }
    }
    let score_h = best_h.as_ref().map_or(0.0, |b| b.0);
    let score_f = best_f.as_ref().map_or(0.0, |b| b.0);
    if score_h + score_f <= 0.0 {
        return Err(VisionError::EstimationFailed("no model explains the matches".into()));
    }
    let k = intrinsics.matrix();
    let k_inv = k.try_inverse().ok_or_else(|| VisionError::EstimationFailed("singular intrinsics".into()))?;
    let use_h = score_h / (score_h + score_f) > HOMOGRAPHY_RATIO;

    let (mask, hypotheses) = if use_h {
        let (_, h, mask) = best_h.expect("positive homography score");
        let inl_a: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| pa[i]).collect();
        let inl_b: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| pb[i]).collect();
        let h = fit_homography(&inl_a, &inl_b).unwrap_or(h);
        let calibrated = k_inv * h * k;
        match homography_hypotheses(&calibrated) {
            Some(HomographyMotion::RotationOnly(r)) => {
                let inlier_count = mask.iter().filter(|&&b| b).count();
                let mean_reproj_error = mean_rotation_error(&r, &k, &k_inv, pa, pb, &mask);
                // Camera B's orientation in A is the inverse of the point map.
                return Ok(PoseEstimate {
                    rotation: So3::from_matrix_projected(&r.transpose()),
                    translation: Vector3::zeros(),
                    inlier_count,
                    mean_reproj_error,
                    degenerate_translation: true,
                    used_homography: true,
                });
            }
            Some(HomographyMotion::Hypotheses(hs)) => (mask, hs),
            None => return Err(VisionError::EstimationFailed("homography decomposition failed".into())),
        }
    } else {
        let (_, f, mask) = best_f.expect("positive fundamental score");
        let inl_a: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| pa[i]).collect();
        let inl_b: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| pb[i]).collect();
        let f = fit_fundamental(&inl_a, &inl_b).unwrap_or(f);
        let e = k.transpose() * f * k;
        (mask, essential_hypotheses(&e))
    };

    let inlier_count = mask.iter().filter(|&&b| b).count();
    let checks: Vec<Check> = hypotheses.iter().map(|h| check_motion(h, &k, pa, pb, &mask)).collect();
    let best = (0..hypotheses.len())
        .max_by(|&a, &b| {
            checks[a]
                .good
                .cmp(&checks[b].good)
                .then_with(|| checks[b].mean_error.total_cmp(&checks[a].mean_error))
        })
        .ok_or_else(|| VisionError::EstimationFailed("no motion hypotheses".into()))?;
    if inlier_count == 0 || 2 * checks[best].good < inlier_count {
        return Err(VisionError::AmbiguousMotion {
            positive: checks[best].good,
            inliers: inlier_count,
        });
    }
    let h = &hypotheses[best];
    let rotation = So3::from_matrix_projected(&h.rotation);
    let r_inv = rotation.inverse();
    let t = -(r_inv * h.translation);
    let norm = t.norm();
    let degenerate = norm <= 1e-6;
    Ok(PoseEstimate {
        rotation: r_inv,
        translation: if degenerate { Vector3::zeros() } else { t / norm },
        inlier_count,
        mean_reproj_error: checks[best].mean_error,
        degenerate_translation: degenerate,
        used_homography: use_h,
    })
}

fn mean_rotation_error(
    r: &Matrix3<f64>,
    k: &Matrix3<f64>,
    k_inv: &Matrix3<f64>,
    pa: &[Vector2<f64>],
    pb: &[Vector2<f64>],
    mask: &[bool],
) -> f64 {
    let map = k * r * k_inv;
    let errs: Vec<f64> = (0..pa.len())
        .filter(|&i| mask[i])
        .filter_map(|i| apply(&map, &pa[i]).map(|m| (m - pb[i]).norm()))
        .collect();
    if errs.is_empty() {
        f64::INFINITY
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}

/// Two-view motion of image B relative to image A from keypoint matches.
pub fn two_view_pose(
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    intrinsics: &Intrinsics,
    seed: u64,
) -> Result<PoseEstimate, VisionError> {
    let (pa, pb) = match_points(matches, kps_a, kps_b);
    two_view_pose_points(&pa, &pb, intrinsics, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn project(k: &Intrinsics, x: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy)
    }

    /// Points of a general 3D cloud seen from A (identity) and from B whose
    /// world pose is (`rot`, `centre`).
    fn views(rot: &So3, centre: &Vector3<f64>, planar: bool, seed: u64) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
        let k = Intrinsics::synthetic();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        while pa.len() < 150 {
            let depth = if planar { 1.0 } else { rng.random_range(2.0..6.0) };
            let x = Vector3::new(rng.random_range(-0.6..0.6) * depth, rng.random_range(-0.45..0.45) * depth, depth);
            let xb = rot.inverse() * (x - centre);
            if xb.z <= 0.1 {
                continue;
            }
            pa.push(project(&k, &x));
            pb.push(project(&k, &xb));
        }
        (pa, pb)
    }

    #[test]
    fn general_scene_translation_and_rotation() {
        let rot = So3::exp(&Vector3::new(0.02, -0.05, 0.01));
        let centre = Vector3::new(0.3, -0.1, 0.05);
        let (pa, pb) = views(&rot, &centre, false, 4);
        let est = two_view_pose_points(&pa, &pb, &Intrinsics::synthetic(), 0).unwrap();
        assert!(!est.used_homography);
        let err = (est.rotation.inverse() * rot).angle();
        assert!(err.to_degrees() < 0.1, "rotation error {err}");
        let cos = est.translation.dot(&centre.normalize());
        assert!(cos.clamp(-1.0, 1.0).acos().to_degrees() < 0.5);
    }

    #[test]
    fn too_few_matches_fail() {
        let (pa, pb) = views(&So3::identity(), &Vector3::new(0.1, 0.0, 0.0), true, 1);
        assert!(matches!(
            two_view_pose_points(&pa[..7], &pb[..7], &Intrinsics::synthetic(), 0),
            Err(VisionError::EstimationFailed(_))
        ));
    }

    #[test]
    fn rotation_output_is_valid() {
        let rot = So3::about_axis(0, 0.03);
        let (pa, pb) = views(&rot, &Vector3::new(0.0, 0.2, 0.1), false, 7);
        let est = two_view_pose_points(&pa, &pb, &Intrinsics::synthetic(), 3).unwrap();
        assert!(est.rotation.is_valid(1e-9));
    }
}
