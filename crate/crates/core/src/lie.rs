//! se(3) / SE(3) algebra.
//!
//! Tangent vectors are ordered `(v, w)`: translation first, rotation second.
//! A relative pose `p_t` maps coordinates of frame `t` into frame `t - 1`,
//! so `apply(exp_map(p_t), X_t) = X_{t-1}` for a static point.

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the Rodrigues and `V(w)` coefficients use
/// their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Rotations closer than this to pi have no unique logarithm.
pub const LOG_PI_MARGIN: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Relative camera motion in the Lie algebra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPose {
    /// Translation, normalized scene units.
    pub v: Vector3<f64>,
    /// Axis-angle rotation, radians.
    pub w: Vector3<f64>,
}

impl Default for TangentPose {
    fn default() -> Self {
        Self::zero()
    }
}

impl TangentPose {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { v, w }
    }

    pub fn zero() -> Self {
        Self {
            v: Vector3::zeros(),
            w: Vector3::zeros(),
        }
    }

    /// Builds from a stacked `(v, w)` vector.
    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            v: Vector3::new(x[0], x[1], x[2]),
            w: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|c| c.is_finite())
    }

    /// Rescales the translational part, e.g. between normalized and scene units.
    pub fn scale_translation(&self, factor: f64) -> Self {
        Self {
            v: self.v * factor,
            w: self.w,
        }
    }
}

/// A rigid motion `X -> R X + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality and orientation of `rotation`.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite transform entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (|R^T R - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant is {det}, expected 1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Unit quaternion with non-negative scalar part.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `self * other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn exp(p: &TangentPose) -> Result<Self> {
        exp_map(p)
    }

    pub fn log(&self) -> Result<TangentPose> {
        log_map(self)
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// Skew-symmetric matrix with `hat(a) * b = a x b`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        let half_sin = (0.5 * theta).sin();
        (
            theta.sin() / theta,
            2.0 * half_sin * half_sin / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let (a, b, _) = rodrigues_coefficients(theta);
    let k = hat(w);
    Matrix3::identity() + k * a + k * k * b
}

/// `V(w)`, the SO(3) left Jacobian; `t = V(w) v` in `exp_map`.
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let (_, b, c) = rodrigues_coefficients(theta);
    let k = hat(w);
    Matrix3::identity() + k * b + k * k * c
}

pub fn so3_right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian(&(-w))
}

fn so3_left_jacobian_inverse(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    // (1 - (t/2) cot(t/2)) / t^2
    let c = if theta < 1e-3 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn exp_map(p: &TangentPose) -> Result<RigidTransform> {
    if !p.is_finite() {
        return Err(Error::InvalidArgument("non-finite tangent pose".into()));
    }
    Ok(RigidTransform {
        rotation: so3_exp(&p.w),
        translation: so3_left_jacobian(&p.w) * p.v,
    })
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let theta = rotation_angle(r);
    if theta > std::f64::consts::PI - LOG_PI_MARGIN {
        return Err(Error::DegenerateRotation { angle: theta });
    }
    let skew = vee(&(r - r.transpose()));
    if theta < SMALL_ANGLE {
        return Ok(skew * (0.5 + theta * theta / 12.0));
    }
    if theta < 2.5 {
        return Ok(skew * (theta / (2.0 * theta.sin())));
    }
    // Near pi the antisymmetric part vanishes; take the axis from the
    // symmetric part (1 - cos t) a a^T and fix its sign with the skew vector.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * theta.cos();
    let (mut best, mut best_norm) = (0, 0.0);
    for j in 0..3 {
        let n = sym.column(j).norm();
        if n > best_norm {
            best = j;
            best_norm = n;
        }
    }
    let mut axis: Vector3<f64> = sym.column(best) / best_norm;
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Logarithm onto the canonical chart `|w| < pi`.
pub fn log_map(t: &RigidTransform) -> Result<TangentPose> {
    let w = so3_log(&t.rotation)?;
    let v = so3_left_jacobian_inverse(&w) * t.translation;
    Ok(TangentPose { v, w })
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

pub fn apply(t: &RigidTransform, x: &Vector3<f64>) -> Vector3<f64> {
    t.apply(x)
}

/// Off-diagonal block `Q(rho, phi)` of the SE(3) left Jacobian.
fn se3_q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (c1, c2, c3) = if theta < 1e-2 {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta),
        )
    };
    let rx = hat(rho);
    let px = hat(phi);
    let pr = px * rx;
    let rp = rx * px;
    let prp = pr * px;
    rx * 0.5 + (pr + rp + prp) * c1 + (px * pr + rp * px - prp * 3.0) * c2
        + (prp * px + px * prp) * c3
}

/// Right Jacobian of the SE(3) exponential in `(v, w)` ordering:
/// `exp(p + d) ~ exp(p) exp(J_r(p) d)` for small `d`.
pub fn se3_right_jacobian(p: &TangentPose) -> Matrix6<f64> {
    let jr = so3_right_jacobian(&p.w);
    let q = se3_q_block(&(-p.v), &(-p.w));
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr);
    m
}

/// Jacobian of `exp(p) X` with respect to the tangent coordinates `p`.
pub fn transform_point_jacobian(
    p: &TangentPose,
    t: &RigidTransform,
    x: &Vector3<f64>,
) -> nalgebra::Matrix3x6<f64> {
    let mut local = nalgebra::Matrix3x6::zeros();
    local
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    local.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(x)));
    t.rotation * local * se3_right_jacobian(p)
}
