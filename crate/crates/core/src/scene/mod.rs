//! Gaussian scene representation, covariance composition and camera projection.

mod camera;
pub mod file;
mod gaussian;
mod projection;

pub use camera::Camera;
pub use gaussian::{
    compose_covariance, compose_covariance_vjp, logit, normalize_quaternion,
    normalize_quaternion_vjp, quat_to_rot, quat_to_rot_vjp, sigmoid,
    Gaussian,
};
pub use projection::{
    project_gaussian, project_gaussian_vjp, project_mean_cov, project_mean_cov_vjp, GeometryGrad,
    Projected2D, Projected2DGrad, ProjectionConfig,
};
