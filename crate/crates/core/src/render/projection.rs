//! Equirectangular projection onto the receiver's azimuth/elevation plane.
//!
//! In array-frame coordinates `(x, y, z)` with `rho = sqrt(x^2 + y^2)` and
//! `r = |p|`: azimuth `atan2(y, x)` in `[0, 360)`, elevation `atan2(rho, z)`
//! measured from boresight, both in degrees. Points behind the array plane
//! (`z < 0`) are outside the imaged hemisphere.

use nalgebra::{Matrix2, Matrix2x3};

use crate::geometry::{Mat3, ReceiverFrame, Vec3};

/// Added to every projected covariance, deg^2.
pub const COV2D_REGULARIZER: f64 = 0.01;
/// Ranges and off-axis distances below this are degenerate (meters).
pub const MIN_RANGE: f64 = 1e-6;

const DEG: f64 = 180.0 / std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// `(azimuth, elevation)` in degrees.
    pub center: [f64; 2],
    /// Range to the array origin, meters.
    pub depth: f64,
    /// d(center)/d(world position), degrees per meter.
    pub jacobian: Matrix2x3<f64>,
    /// Array-frame position.
    pub local: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionError {
    /// Too close to the array origin or to the boresight axis.
    Degenerate,
    /// Behind the array plane.
    Behind,
}

/// Jacobian of `(azimuth, elevation)` in degrees w.r.t. array-frame position.
pub fn local_jacobian(p: &Vec3) -> Matrix2x3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    let rho2 = x * x + y * y;
    let rho = rho2.sqrt();
    let r2 = rho2 + z * z;
    DEG * Matrix2x3::new(
        -y / rho2,
        x / rho2,
        0.0,
        x * z / (rho * r2),
        y * z / (rho * r2),
        -rho / r2,
    )
}

/// Second derivatives of the local Jacobian: `h[k]` is d(J)/d(p_k).
pub fn local_jacobian_hessian(p: &Vec3) -> [Matrix2x3<f64>; 3] {
    let (x, y, z) = (p.x, p.y, p.z);
    let rho2 = x * x + y * y;
    let rho = rho2.sqrt();
    let rho3 = rho2 * rho;
    let rho4 = rho2 * rho2;
    let r2 = rho2 + z * z;
    let r4 = r2 * r2;
    let a_xx = 2.0 * x * y / rho4;
    let a_xy = (y * y - x * x) / rho4;
    let b_common = |u: f64, v: f64| -u * v * z / (rho3 * r2) - 2.0 * u * v * z / (rho * r4);
    // d/dx
    let hx = Matrix2x3::new(
        a_xx,
        a_xy,
        0.0,
        z / (rho * r2) + b_common(x, x),
        b_common(x, y),
        -x / (rho * r2) + 2.0 * rho * x / r4,
    );
    // d/dy
    let hy = Matrix2x3::new(
        a_xy,
        -a_xx,
        0.0,
        b_common(x, y),
        z / (rho * r2) + b_common(y, y),
        -y / (rho * r2) + 2.0 * rho * y / r4,
    );
    // d/dz
    let hz = Matrix2x3::new(
        0.0,
        0.0,
        0.0,
        x / (rho * r2) - 2.0 * x * z * z / (rho * r4),
        y / (rho * r2) - 2.0 * y * z * z / (rho * r4),
        2.0 * rho * z / r4,
    );
    [DEG * hx, DEG * hy, DEG * hz]
}

pub fn project_mercator(mu: &Vec3, receiver: &ReceiverFrame) -> Result<Projection, ProjectionError> {
    let p = receiver.to_local(mu);
    let r = p.norm();
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    if r < MIN_RANGE || rho < MIN_RANGE {
        return Err(ProjectionError::Degenerate);
    }
    if p.z < 0.0 {
        return Err(ProjectionError::Behind);
    }
    let azimuth = (p.y.atan2(p.x) * DEG).rem_euclid(360.0);
    let elevation = rho.atan2(p.z) * DEG;
    let jacobian = local_jacobian(&p) * receiver.orientation.transpose();
    Ok(Projection {
        center: [azimuth, elevation],
        depth: r,
        jacobian,
        local: p,
    })
}

/// `J Sigma J^T + COV2D_REGULARIZER * I`.
pub fn project_covariance(cov3d: &Mat3, jacobian: &Matrix2x3<f64>) -> Matrix2<f64> {
    jacobian * cov3d * jacobian.transpose() + Matrix2::identity() * COV2D_REGULARIZER
}

/// Signed azimuth difference wrapped to `[-180, 180)`.
pub fn wrap_azimuth(d: f64) -> f64 {
    (d + 180.0).rem_euclid(360.0) - 180.0
}
