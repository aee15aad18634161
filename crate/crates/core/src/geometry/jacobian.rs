//! Left and right Jacobians of the SE(3) exponential map.
//!
//! These 6x6 matrices relate additive changes of a twist to multiplicative
//! increments of the group element:
//!
//! ```text
//! exp(xi + d) ~ exp(Jl(xi) d) * exp(xi)    (left)
//! exp(xi + d) ~ exp(xi) * exp(Jr(xi) d)    (right)
//! ```
//!
//! The pose-refinement layer uses the inverse right Jacobian to express the
//! derivative of `log(T * exp(d))` with respect to the local increment `d`.

use super::{hat, Mat3, Twist, Vec3, SMALL_ANGLE};
use nalgebra::Matrix6;

pub type Mat6 = Matrix6<f64>;

/// SO(3) left Jacobian `I + (1-cos)/t^2 W + (t-sin)/t^3 W^2`.
pub fn so3_left_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let omega = hat(phi);
    let omega2 = omega * omega;
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let half_sin = (0.5 * theta).sin();
        let t2 = theta * theta;
        (
            2.0 * half_sin * half_sin / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Mat3::identity() + b * omega + c * omega2
}

/// Closed-form inverse of [`so3_left_jacobian`]; valid for angles below pi.
pub fn so3_left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let omega = hat(phi);
    let omega2 = omega * omega;
    let e = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Mat3::identity() - 0.5 * omega + e * omega2
}

// Coupling block of the SE(3) left Jacobian (Barfoot's Q matrix).
fn coupling_block(xi: &Twist) -> Mat3 {
    let theta = xi.phi.norm();
    let (m2, m3, m4) = if theta < 1e-2 {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0,
        )
    } else {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
        )
    };
    let p = hat(&xi.rho);
    let w = hat(&xi.phi);
    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    0.5 * p
        + m2 * (wp + pw + wpw)
        + m3 * (w * wp + pw * w - 3.0 * wpw)
        + m4 * (wpw * w + w * wp * w)
}

/// SE(3) left Jacobian in block form `[[Jl, Q], [0, Jl]]` for twists ordered
/// `[rho, phi]`.
pub fn se3_left_jacobian(xi: &Twist) -> Mat6 {
    let jl = so3_left_jacobian(&xi.phi);
    let q = coupling_block(xi);
    let mut out = Mat6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    out
}

/// Inverse of [`se3_left_jacobian`]: `[[Jl^-1, -Jl^-1 Q Jl^-1], [0, Jl^-1]]`.
pub fn se3_left_jacobian_inv(xi: &Twist) -> Mat6 {
    let jl_inv = so3_left_jacobian_inv(&xi.phi);
    let q = coupling_block(xi);
    let top_right = -jl_inv * q * jl_inv;
    let mut out = Mat6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl_inv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl_inv);
    out
}

fn negated(xi: &Twist) -> Twist {
    Twist::new(-xi.rho, -xi.phi)
}

/// SE(3) right Jacobian, `Jr(xi) = Jl(-xi)`.
pub fn se3_right_jacobian(xi: &Twist) -> Mat6 {
    se3_left_jacobian(&negated(xi))
}

/// Inverse of the SE(3) right Jacobian.
pub fn se3_right_jacobian_inv(xi: &Twist) -> Mat6 {
    se3_left_jacobian_inv(&negated(xi))
}
