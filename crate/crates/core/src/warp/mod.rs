//! Deformable forward warp network and its exact input/parameter derivatives.

pub mod checkpoint;
mod encoding;
mod network;

pub use encoding::{encoded_len, positional_encode};
pub use network::{
    Activation, InputGrad, Tangents, WarpConfig, WarpField, WarpInput, WarpJacobians, WarpOutput,
    WarpTape, OUTPUTS, RAW_INPUTS, TIME_INPUT,
};

use crate::scene::Gaussian;

/// Network input for a canonical Gaussian at time `t`.
pub fn warp_input(g: &Gaussian, t: f64) -> WarpInput {
    WarpInput::new(g.position, g.rotation, t)
}

/// `(δp, δq, δs) = F_θ(g, t)`.
pub fn warp_forward(field: &WarpField, g: &Gaussian, t: f64) -> WarpOutput {
    field.forward(&warp_input(g, t))
}

pub fn warp_jacobians(field: &WarpField, g: &Gaussian, t: f64) -> WarpJacobians {
    field.jacobians(&warp_input(g, t))
}

pub fn param_gradients(field: &WarpField, g: &Gaussian, t: f64, upstream: &WarpOutput) -> Vec<f64> {
    field.param_gradients(&warp_input(g, t), upstream)
}

/// Canonical Gaussian moved to time `t`: `p + δp`, `normalize(q + δq)`, `s + δs`.
pub fn deform(field: &WarpField, g: &Gaussian, t: f64) -> Gaussian {
    apply_offsets(g, &warp_forward(field, g, t))
}

pub fn apply_offsets(g: &Gaussian, d: &WarpOutput) -> Gaussian {
    Gaussian {
        position: g.position + d.position,
        rotation: crate::scene::normalize_quaternion(&(g.rotation + d.rotation)),
        log_scale: g.log_scale + d.log_scale,
        opacity_logit: g.opacity_logit,
        color: g.color,
    }
}
