//! Rotations in 3D and their exponential / logarithm maps.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

const SMALL_ANGLE: f64 = 1e-7;
/// Below this distance from π the axis is read off the symmetric part.
const NEAR_PI: f64 = 1e-3;

/// Skew-symmetric matrix of `v`, so that `hat(v) * u = v × u`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// A 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct So3(Matrix3<f64>);

impl So3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Accepts `m` if it is orthonormal with determinant one within `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Option<Self> {
        let candidate = Self(m);
        candidate.is_valid(tol).then_some(candidate)
    }

    /// Projects an approximately orthonormal matrix onto the rotation group.
    pub fn from_matrix_projected(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut d = Matrix3::identity();
            d[(2, 2)] = -1.0;
            r = u * d * v_t;
        }
        Self(r)
    }

    /// Rotation about a principal axis: 0 = x, 1 = y, 2 = z.
    pub fn about_axis(axis: usize, angle: f64) -> Self {
        let mut w = Vector3::zeros();
        w[axis] = angle;
        Self::exp(&w)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.0.transpose() * self.0 - Matrix3::identity()).amax();
        ortho <= tol && (self.0.determinant() - 1.0).abs() <= tol
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rodrigues formula.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta_sq = omega.norm_squared();
        let theta = theta_sq.sqrt();
        let k = hat(omega);
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
        };
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Axis-angle vector with norm in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let axis_sin = vee(r);
        let sin_theta = axis_sin.norm();
        let theta = sin_theta.atan2(cos_theta);
        if theta < SMALL_ANGLE {
            return axis_sin;
        }
        if std::f64::consts::PI - theta < NEAR_PI {
            // (R + Rᵀ)/2 = cosθ I + (1 - cosθ) n nᵀ
            let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
            let outer = sym / (1.0 - cos_theta);
            let col = (0..3)
                .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
                .expect("three columns");
            let mut n: Vector3<f64> = outer.column(col).into();
            n /= n.norm();
            if n.dot(&axis_sin) < 0.0 {
                n = -n;
            }
            return n * theta;
        }
        axis_sin * (theta / sin_theta)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let cos_theta = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        vee(&self.0).norm().atan2(cos_theta)
    }

    /// From a quaternion `(w, x, y, z)`; the input is normalised first.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Self(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0;
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [(m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s]
        };
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        q.map(|v| sign * v / n)
    }
}

impl Mul for So3 {
    type Output = So3;

    fn mul(self, rhs: So3) -> So3 {
        So3(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for So3 {
    type Output = Vector3<f64>;

    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: So3,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self { rotation: So3::identity(), translation: Vector3::zeros() }
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self { rotation: r_inv, translation: -(r_inv * self.translation) }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Pose of `other` expressed in the frame of `self` (both world poses).
    pub fn relative_to(&self, other: &RigidPose) -> Self {
        self.inverse().compose(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn exp_log_examples() {
        assert_eq!(So3::identity().log(), Vector3::zeros());
        let r = So3::exp(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!((r.log() - Vector3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-9);
        assert_eq!(So3::exp(&Vector3::zeros()), So3::identity());
        let half_turn = So3::exp(&Vector3::new(0.0, 0.0, PI));
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((half_turn.matrix() - expected).amax() < 1e-9);
    }

    #[test]
    fn log_near_pi_recovers_axis() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        for theta in [PI, PI - 1e-5, PI - 5e-4, PI - 2e-3] {
            let w = axis * theta;
            let back = So3::exp(&w).log();
            // At exactly π the axis sign is not observable.
            let err = if theta == PI { (back - w).norm().min((back + w).norm()) } else { (back - w).norm() };
            assert!(err < 1e-8, "theta {theta}: {back:?}");
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let w = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let r = So3::exp(&w);
            let [qw, qx, qy, qz] = r.to_quaternion();
            let back = So3::from_quaternion(qw, qx, qy, qz);
            assert!((back.matrix() - r.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn relative_pose_composes() {
        let a = RigidPose { rotation: So3::about_axis(1, 0.3), translation: Vector3::new(1.0, 0.0, 2.0) };
        let b = RigidPose { rotation: So3::about_axis(2, -0.2), translation: Vector3::new(0.5, 1.0, 0.0) };
        let c = RigidPose { rotation: So3::about_axis(0, 0.1), translation: Vector3::new(0.0, -1.0, 1.0) };
        let ab = a.relative_to(&b);
        let bc = b.relative_to(&c);
        let ac = a.relative_to(&c);
        let composed = ab.compose(&bc);
        assert!((composed.rotation.matrix() - ac.rotation.matrix()).amax() < 1e-12);
        assert!((composed.translation - ac.translation).norm() < 1e-12);
    }
}
