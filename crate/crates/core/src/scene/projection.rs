use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::camera::Camera;
use super::gaussian::{compose_covariance, compose_covariance_vjp, Gaussian};
use crate::error::Result;

/// Conventions applied when splatting a 3D Gaussian onto the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    /// Gaussians with camera-frame depth at or below this value are culled.
    pub near: f64,
    /// Added to the diagonal of every projected covariance (px²).
    pub dilation: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            near: 0.01,
            dilation: 0.3,
        }
    }
}

/// A Gaussian footprint on the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected2D {
    pub mean: Vector2<f64>,
    /// Dilated 2D covariance in px².
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

/// Gradient of a scalar with respect to a [`Projected2D`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Projected2DGrad {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

/// Affine (EWA) Jacobian of the perspective map at camera-frame point `pc`.
fn perspective_jacobian(cam: &Camera, pc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * pc.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * pc.y * iz2,
    )
}

/// Projects a mean and 3D covariance; `None` when culled by the near plane.
pub fn project_mean_cov(
    p: &Vector3<f64>,
    cov3: &Matrix3<f64>,
    cam: &Camera,
    cfg: &ProjectionConfig,
) -> Option<Projected2D> {
    let pc = cam.to_camera(p);
    if !(pc.z > cfg.near) {
        return None;
    }
    let j = perspective_jacobian(cam, &pc);
    let view_cov = cam.rotation * cov3 * cam.rotation.transpose();
    let mut cov = j * view_cov * j.transpose();
    cov = (cov + cov.transpose()) * 0.5;
    cov[(0, 0)] += cfg.dilation;
    cov[(1, 1)] += cfg.dilation;
    Some(Projected2D {
        mean: cam.project_camera_point(&pc),
        cov,
        depth: pc.z,
    })
}

/// Pulls a gradient on a projected footprint back to `(∂/∂p, ∂/∂Σ₃)`.
pub fn project_mean_cov_vjp(
    p: &Vector3<f64>,
    cov3: &Matrix3<f64>,
    cam: &Camera,
    grad: &Projected2DGrad,
) -> (Vector3<f64>, Matrix3<f64>) {
    let pc = cam.to_camera(p);
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let j = perspective_jacobian(cam, &pc);
    let view_cov = cam.rotation * cov3 * cam.rotation.transpose();

    let cov_grad = (grad.cov + grad.cov.transpose()) * 0.5;
    let view_grad = j.transpose() * cov_grad * j;
    let j_grad = 2.0 * cov_grad * j * view_cov;

    let mut pc_grad = Vector3::zeros();
    // mean: ∂μ/∂pc = J
    pc_grad += j.transpose() * grad.mean;
    pc_grad.z += grad.depth;
    // covariance through J(pc)
    pc_grad.x += j_grad[(0, 2)] * (-cam.fx * iz2);
    pc_grad.y += j_grad[(1, 2)] * (-cam.fy * iz2);
    pc_grad.z += j_grad[(0, 0)] * (-cam.fx * iz2)
        + j_grad[(0, 2)] * (2.0 * cam.fx * x * iz3)
        + j_grad[(1, 1)] * (-cam.fy * iz2)
        + j_grad[(1, 2)] * (2.0 * cam.fy * y * iz3);

    let p_grad = cam.rotation.transpose() * pc_grad;
    let cov3_grad = cam.rotation.transpose() * view_grad * cam.rotation;
    (p_grad, cov3_grad)
}

/// Projects a Gaussian into `cam`. Returns `Ok(None)` when the Gaussian is culled.
pub fn project_gaussian(
    g: &Gaussian,
    cam: &Camera,
    cfg: &ProjectionConfig,
) -> Result<Option<Projected2D>> {
    let cov3 = compose_covariance(&g.rotation, &g.log_scale)?;
    Ok(project_mean_cov(&g.position, &cov3, cam, cfg))
}

/// Gradient with respect to the Gaussian's position, raw quaternion and log-scale.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeometryGrad {
    pub position: Vector3<f64>,
    pub rotation: nalgebra::Vector4<f64>,
    pub log_scale: Vector3<f64>,
}

pub fn project_gaussian_vjp(
    g: &Gaussian,
    cam: &Camera,
    grad: &Projected2DGrad,
) -> Result<GeometryGrad> {
    let cov3 = compose_covariance(&g.rotation, &g.log_scale)?;
    let (position, cov3_grad) = project_mean_cov_vjp(&g.position, &cov3, cam, grad);
    let (rotation, log_scale) = compose_covariance_vjp(&g.rotation, &g.log_scale, &cov3_grad)?;
    Ok(GeometryGrad {
        position,
        rotation,
        log_scale,
    })
}
