//! SE(3) rigid transforms, their tangent-space maps, Euler conversions and
//! random extrinsic perturbations.
//!
//! Rotations are 3x3 orthonormal matrices with determinant +1; twists stack
//! a translational component `rho` (meters) over a rotational component
//! `phi` (radians). Exponential and logarithm maps use closed forms with a
//! Taylor fallback below [`SMALL_ANGLE`] to avoid cancellation in the
//! trigonometric coefficient ratios.

pub mod jacobian;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use rand::Rng;
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;
pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;

/// Below this rotation magnitude the exp/log coefficient ratios switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotation angles at or beyond `pi - ANGLE_NEAR_PI_MARGIN` make the
/// logarithm map ill-conditioned and are rejected.
pub const ANGLE_NEAR_PI_MARGIN: f64 = 1e-6;

const ORTHONORMALITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal (deviation {deviation:.3e})")]
    NonOrthonormalRotation { deviation: f64 },
    #[error("rotation angle {angle:.9} is within {margin:.1e} of pi; logarithm is ill-conditioned")]
    AngleNearPi { angle: f64, margin: f64 },
    #[error("pitch is within gimbal lock (|r31| = {r31_abs:.12})")]
    GimbalLock { r31_abs: f64 },
    #[error("perturbation bounds must be non-negative and finite")]
    InvalidPerturbRange,
}

/// Skew-symmetric (hat) matrix of a 3-vector: `hat(v) * w == v.cross(w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `sin(theta)/theta`, `(1 - cos(theta))/theta^2`, `(theta - sin(theta))/theta^3`.
///
/// The middle ratio uses the half-angle identity `1 - cos = 2 sin^2(theta/2)`
/// so it stays accurate down to the series switch-over.
fn rotation_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0,
            0.5 - t2 / 24.0,
            1.0 / 6.0 - t2 / 120.0,
        )
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

/// Rotation matrix of an so(3) element.
pub fn rotation_exp(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let (a, b, _) = rotation_coefficients(theta);
    let omega = hat(phi);
    Mat3::identity() + a * omega + b * (omega * omega)
}

/// Rotation vector of a rotation matrix.
///
/// Fails when the rotation angle is within [`ANGLE_NEAR_PI_MARGIN`] of pi,
/// where the axis extraction from `R - R^T` loses all precision.
pub fn rotation_log(r: &Mat3) -> Result<Vec3, GeometryError> {
    let s_vec = vee(&(r - r.transpose())) * 0.5;
    let s = s_vec.norm();
    let c = (r.trace() - 1.0) * 0.5;
    let theta = s.atan2(c);
    if theta >= std::f64::consts::PI - ANGLE_NEAR_PI_MARGIN {
        return Err(GeometryError::AngleNearPi {
            angle: theta,
            margin: ANGLE_NEAR_PI_MARGIN,
        });
    }
    if theta < SMALL_ANGLE {
        Ok(s_vec)
    } else {
        Ok(s_vec * (theta / s))
    }
}

/// Element of the SE(3) tangent space: translational `rho` stacked over
/// rotational `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rho: Vec3,
    pub phi: Vec3,
}

impl Twist {
    pub fn new(rho: Vec3, phi: Vec3) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self {
            rho: Vec3::zeros(),
            phi: Vec3::zeros(),
        }
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Self {
            rho: Vec3::new(v[0], v[1], v[2]),
            phi: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn as_vector(&self) -> Vec6 {
        Vec6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm_inf(&self) -> f64 {
        self.as_vector().amax()
    }

    pub fn norm_l1(&self) -> f64 {
        self.as_vector().iter().map(|v| v.abs()).sum()
    }
}

/// Rigid transform: `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Transform {
    rotation: Mat3,
    translation: Vec3,
}

impl SE3Transform {
    /// Validates orthonormality (`|R^T R - I|_F < 1e-9`, `det R > 0`).
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let deviation = (rotation.transpose() * rotation - Mat3::identity()).norm();
        if deviation >= ORTHONORMALITY_TOL || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NonOrthonormalRotation { deviation });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Skips the orthonormality check; callers must guarantee it.
    pub fn from_parts_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Exponential map. Rodrigues rotation plus the V-matrix acting on `rho`.
    pub fn exp(xi: &Twist) -> Self {
        let theta = xi.phi.norm();
        let (a, b, c) = rotation_coefficients(theta);
        let omega = hat(&xi.phi);
        let omega2 = omega * omega;
        let rotation = Mat3::identity() + a * omega + b * omega2;
        let v = Mat3::identity() + b * omega + c * omega2;
        Self {
            rotation,
            translation: v * xi.rho,
        }
    }

    /// Logarithm map; inverse of [`SE3Transform::exp`] away from angle pi.
    pub fn log(&self) -> Result<Twist, GeometryError> {
        let phi = rotation_log(&self.rotation)?;
        let theta = phi.norm();
        let omega = hat(&phi);
        let omega2 = omega * omega;
        // V^{-1} = I - omega/2 + e * omega^2 with
        // e = (1 - (theta/2) cot(theta/2)) / theta^2.
        let e = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            1.0 / 12.0 + t2 / 720.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };
        let v_inv = Mat3::identity() - 0.5 * omega + e * omega2;
        Ok(Twist {
            rho: v_inv * self.translation,
            phi,
        })
    }

    /// Group product: `(self . other)(p) = self(other(p))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// 4x4 homogeneous matrix.
    pub fn matrix4(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest absolute entry difference over rotation and translation.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

/// Roll-pitch-yaw angles of the extrinsic ZYX convention
/// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Extracts ZYX angles. Fails near gimbal lock (`|r31|` within 1e-9 of 1).
    pub fn from_rotation(r: &Mat3) -> Result<Self, GeometryError> {
        let r31 = r[(2, 0)];
        if r31.abs() > 1.0 - 1e-9 {
            return Err(GeometryError::GimbalLock { r31_abs: r31.abs() });
        }
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let pitch = (-r31).atan2((r[(2, 1)].powi(2) + r[(2, 2)].powi(2)).sqrt());
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        Ok(Self {
            roll: wrap_half_open(roll),
            pitch,
            yaw: wrap_half_open(yaw),
        })
    }

    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn to_rotation(&self) -> Mat3 {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        Mat3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    pub fn norm_l2(&self) -> f64 {
        (self.roll * self.roll + self.pitch * self.pitch + self.yaw * self.yaw).sqrt()
    }
}

// atan2 returns values in [-pi, pi]; fold the single -pi case onto +pi so
// roll and yaw live in (-pi, pi].
fn wrap_half_open(angle: f64) -> f64 {
    if angle == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        angle
    }
}

/// Per-axis bounds for random extrinsic perturbations.
///
/// Zero bounds are accepted as the degenerate "no perturbation" case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbRange {
    max_translation: f64,
    max_rotation: f64,
}

impl PerturbRange {
    /// `max_translation` in meters per axis, `max_rotation` in radians per
    /// Euler axis; both must be finite and non-negative.
    pub fn new(max_translation: f64, max_rotation: f64) -> Result<Self, GeometryError> {
        if !(max_translation.is_finite() && max_rotation.is_finite())
            || max_translation < 0.0
            || max_rotation < 0.0
        {
            return Err(GeometryError::InvalidPerturbRange);
        }
        Ok(Self {
            max_translation,
            max_rotation,
        })
    }

    pub fn max_translation(&self) -> f64 {
        self.max_translation
    }

    pub fn max_rotation(&self) -> f64 {
        self.max_rotation
    }
}

fn uniform_symmetric<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.random_range(-bound..=bound)
    }
}

/// Draws a random perturbation with per-axis uniform translation and
/// per-Euler-axis uniform rotation. Deterministic given the generator state;
/// translation axes are drawn first (x, y, z), then roll, pitch, yaw.
pub fn sample_perturbation<R: Rng>(range: &PerturbRange, rng: &mut R) -> SE3Transform {
    let t = Vec3::new(
        uniform_symmetric(rng, range.max_translation),
        uniform_symmetric(rng, range.max_translation),
        uniform_symmetric(rng, range.max_translation),
    );
    let e = EulerAngles::new(
        uniform_symmetric(rng, range.max_rotation),
        uniform_symmetric(rng, range.max_rotation),
        uniform_symmetric(rng, range.max_rotation),
    );
    SE3Transform::from_parts_unchecked(e.to_rotation(), t)
}

/// Initial (drifted) extrinsic from a ground truth and a perturbation:
/// `T_init = T_gt * dT^{-1}`.
pub fn make_initial_extrinsic(t_gt: &SE3Transform, d_t: &SE3Transform) -> SE3Transform {
    t_gt.compose(&d_t.inverse())
}
