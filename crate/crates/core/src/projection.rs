//! Covariance construction, EWA projection to screen space, and the
//! reverse-mode derivatives of both.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::GaussianPrimitive;

/// Added to the screen-space covariance before inversion, in px².
pub const DILATION: f64 = 0.3;
/// Support radius in standard deviations of the major axis.
pub const SUPPORT_SIGMAS: f64 = 3.0;

/// Normalizes a `(w, x, y, z)` quaternion.
pub fn normalize_quat(q: &Vector4<f64>) -> Result<Vector4<f64>> {
    let n = q.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    Ok(q / n)
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_from(log_scale: &Vector3<f64>, q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let r = quat_to_matrix(&normalize_quat(q)?);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    Ok(m * m.transpose())
}

/// Backpropagates `dL/dΣ` (entries treated as independent) to the log-scale
/// and the unnormalized quaternion.
pub fn covariance_vjp(
    log_scale: &Vector3<f64>,
    q: &Vector4<f64>,
    d_sigma: &Matrix3<f64>,
) -> Result<(Vector3<f64>, Vector4<f64>)> {
    let qn = normalize_quat(q)?;
    let r = quat_to_matrix(&qn);
    let s = log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    let d_m = (d_sigma + d_sigma.transpose()) * m;
    let d_r = d_m * Matrix3::from_diagonal(&s);
    let mut d_log = Vector3::zeros();
    for k in 0..3 {
        let ds: f64 = (0..3).map(|i| r[(i, k)] * d_m[(i, k)]).sum();
        d_log[k] = ds * s[k];
    }
    let d_qn = quat_matrix_vjp(&qn, &d_r);
    let n = q.norm();
    let d_q = (d_qn - qn * qn.dot(&d_qn)) / n;
    Ok((d_log, d_q))
}

fn quat_matrix_vjp(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(dw, dx, dy, dz)
}

/// A primitive projected onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vector2<f64>,
    /// Screen covariance before dilation.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d + DILATION·I`.
    pub conic: Matrix2<f64>,
    pub view_z: f64,
    /// Distance from the camera center, `‖μ − o‖`.
    pub dist: f64,
    pub radius: f64,
}

impl Projected2D {
    /// Mahalanobis exponent `Δᵀ·conic·Δ`.
    #[inline]
    pub fn power(&self, dx: f64, dy: f64) -> f64 {
        self.conic[(0, 0)] * dx * dx + 2.0 * self.conic[(0, 1)] * dx * dy + self.conic[(1, 1)] * dy * dy
    }
}

fn pinhole_jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

/// EWA first-order projection. Returns `None` when the center lies on or
/// behind the near plane.
pub fn project(prim: &GaussianPrimitive, cam: &Camera) -> Result<Option<Projected2D>> {
    let p = cam.rotation * prim.center + cam.translation;
    if p.z <= cam.z_near {
        return Ok(None);
    }
    let sigma = covariance_from(&prim.log_scale, &prim.rotation)?;
    let t = pinhole_jacobian(cam, &p) * cam.rotation;
    let cov2d = t * sigma * t.transpose();
    let dilated = cov2d + Matrix2::identity() * DILATION;
    let Some(conic) = dilated.try_inverse() else {
        return Ok(None);
    };
    let a = dilated[(0, 0)];
    let b = 0.5 * (dilated[(0, 1)] + dilated[(1, 0)]);
    let c = dilated[(1, 1)];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    Ok(Some(Projected2D {
        mean2d: Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy),
        cov2d,
        conic,
        view_z: p.z,
        dist: (prim.center - cam.center()).norm(),
        radius: SUPPORT_SIGMAS * lambda_max.sqrt(),
    }))
}

/// Screen-space weight `exp(−½ Δᵀ conic Δ)`, zero outside the support radius.
#[inline]
pub fn gaussian_weight(proj: &Projected2D, pixel: &Vector2<f64>) -> f64 {
    let dx = pixel.x - proj.mean2d.x;
    let dy = pixel.y - proj.mean2d.y;
    if dx * dx + dy * dy > proj.radius * proj.radius {
        return 0.0;
    }
    (-0.5 * proj.power(dx, dy)).exp().clamp(0.0, 1.0)
}

/// Upstream gradients on the outputs of [`project`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectionGrad {
    pub mean2d: Vector2<f64>,
    /// `dL/dconic` with entries treated as independent.
    pub conic: Matrix2<f64>,
    pub dist: f64,
}

/// Gradients of the primitive's geometric parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeometryGrad {
    pub center: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
}

/// Reverse-mode derivative of [`project`].
pub fn project_vjp(prim: &GaussianPrimitive, cam: &Camera, up: &ProjectionGrad) -> Result<GeometryGrad> {
    let p = cam.rotation * prim.center + cam.translation;
    let sigma = covariance_from(&prim.log_scale, &prim.rotation)?;
    let j = pinhole_jacobian(cam, &p);
    let w = cam.rotation;
    let t = j * w;
    let dilated = t * sigma * t.transpose() + Matrix2::identity() * DILATION;
    let conic = dilated.try_inverse().ok_or(Error::DegenerateRotation)?;

    // conic = M⁻¹  ⇒  dM = −Cᵀ dC Cᵀ
    let d_m = -(conic.transpose() * up.conic * conic.transpose());
    let d_sigma = t.transpose() * d_m * t;
    let d_t = d_m * t * sigma.transpose() + d_m.transpose() * t * sigma;
    let d_j = d_t * w.transpose();

    let (x, y, z) = (p.x, p.y, p.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_p = Vector3::new(
        up.mean2d.x * fx * iz,
        up.mean2d.y * fy * iz,
        -up.mean2d.x * fx * x * iz2 - up.mean2d.y * fy * y * iz2,
    );
    d_p.x += d_j[(0, 2)] * (-fx * iz2);
    d_p.y += d_j[(1, 2)] * (-fy * iz2);
    d_p.z += d_j[(0, 0)] * (-fx * iz2)
        + d_j[(0, 2)] * (2.0 * fx * x * iz3)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(1, 2)] * (2.0 * fy * y * iz3);

    let mut d_center = w.transpose() * d_p;
    if up.dist != 0.0 {
        let diff = prim.center - cam.center();
        let n = diff.norm();
        if n > 0.0 {
            d_center += diff * (up.dist / n);
        }
    }
    let (d_log, d_q) = covariance_vjp(&prim.log_scale, &prim.rotation, &d_sigma)?;
    Ok(GeometryGrad {
        center: d_center,
        log_scale: d_log,
        rotation: d_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

    fn prim(center: Vector3<f64>, log_scale: Vector3<f64>, q: Vector4<f64>) -> GaussianPrimitive {
        GaussianPrimitive {
            center,
            log_scale,
            rotation: q,
            opacity_logit: 0.0,
            color: vec![],
        }
    }

    fn identity_cam() -> Camera {
        Camera::new(100.0, 100.0, 32.0, 32.0, 64, 64, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn covariance_identity() {
        let s = covariance_from(&Vector3::zeros(), &Vector4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(s, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn covariance_axis_aligned() {
        let s = covariance_from(&Vector3::new(LN_2, 0.0, 0.0), &Vector4::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(s, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-14);
    }

    #[test]
    fn covariance_rotated_about_z() {
        let q = Vector4::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2);
        let s = covariance_from(&Vector3::new(LN_2, 0.0, 0.0), &q).unwrap();
        assert_relative_eq!(s, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-14);
    }

    #[test]
    fn covariance_zero_quaternion_errors() {
        assert!(matches!(
            covariance_from(&Vector3::zeros(), &Vector4::zeros()),
            Err(Error::DegenerateRotation)
        ));
    }

    #[test]
    fn on_axis_projection() {
        let cam = identity_cam();
        let sigma = 0.05f64;
        let z = 2.0;
        let p = prim(Vector3::new(0.0, 0.0, z), Vector3::repeat(sigma.ln()), Vector4::new(1.0, 0.0, 0.0, 0.0));
        let proj = project(&p, &cam).unwrap().unwrap();
        assert_relative_eq!(proj.mean2d, Vector2::new(32.0, 32.0), epsilon = 1e-12);
        let expect = (100.0 * sigma / z).powi(2);
        assert_relative_eq!(proj.cov2d[(0, 0)], expect, epsilon = 1e-12);
        assert_relative_eq!(proj.cov2d[(1, 1)], expect, epsilon = 1e-12);
        assert_eq!(proj.dist, 2.0);
        assert_eq!(proj.view_z, 2.0);
    }

    #[test]
    fn behind_near_plane_is_culled() {
        let cam = identity_cam();
        let p = prim(Vector3::new(0.0, 0.0, cam.z_near / 2.0), Vector3::zeros(), Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert!(project(&p, &cam).unwrap().is_none());
    }

    #[test]
    fn weight_examples() {
        let proj = Projected2D {
            mean2d: Vector2::new(3.0, 4.0),
            cov2d: Matrix2::identity(),
            conic: Matrix2::identity(),
            view_z: 1.0,
            dist: 1.0,
            radius: 3.0,
        };
        assert_eq!(gaussian_weight(&proj, &Vector2::new(3.0, 4.0)), 1.0);
        let w = gaussian_weight(&proj, &Vector2::new(3.0 + 2f64.sqrt(), 4.0));
        assert_relative_eq!(w, (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(gaussian_weight(&proj, &Vector2::new(6.5, 4.0)), 0.0);
    }
}
