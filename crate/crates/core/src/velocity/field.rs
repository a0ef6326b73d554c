use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::pinv::{pseudo_inverse, pseudo_inverse_vjp};
use crate::error::{Error, Result};
use crate::warp::{InputGrad, Tangents, WarpField, WarpInput, WarpTape, OUTPUTS, TIME_INPUT};

/// How the velocity is formed from the warp derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityMode {
    /// `v = J⁺ ∂W/∂t`
    Pseudoinverse,
    /// `v = ∂W/∂t`
    Direct,
}

/// What the network sees at intermediate integration stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateMode {
    /// The canonical Gaussian is held fixed while time advances.
    Canonical,
    /// The current integrated state is fed back as the network input.
    Feedback,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Uniform RK4 steps per integration interval.
    pub steps: usize,
    pub velocity: VelocityMode,
    pub state: StateMode,
    /// Relative singular-value cutoff of the pseudoinverse.
    pub pinv_tolerance: f64,
    /// Integrate the rotational velocity (otherwise rotations stay fixed).
    pub rotate: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            velocity: VelocityMode::Pseudoinverse,
            state: StateMode::Canonical,
            pinv_tolerance: 1e-6,
            rotate: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("integrator needs at least one step".into()));
        }
        if !(self.pinv_tolerance > 0.0 && self.pinv_tolerance < 1.0) {
            return Err(Error::Config(format!(
                "pseudoinverse tolerance {} outside (0, 1)",
                self.pinv_tolerance
            )));
        }
        Ok(())
    }
}

/// Positional and rotational (quaternion-space) velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Velocity {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
}

/// Intermediates of one velocity evaluation.
pub struct VelocityTape {
    warp: WarpTape,
    mode: VelocityMode,
    jp: Matrix3<f64>,
    jq: Matrix4<f64>,
    jp_pinv: Matrix3<f64>,
    jq_pinv: Matrix4<f64>,
    dpdt: Vector3<f64>,
    dqdt: Vector4<f64>,
}

fn check_finite(v: &Velocity) -> Result<()> {
    if v.position.iter().chain(v.rotation.iter()).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("velocity".into()))
    }
}

/// Velocity of the warp at network input `input`, with its tape for the reverse pass.
pub fn velocity_with_tape(
    field: &WarpField,
    input: &WarpInput,
    cfg: &IntegratorConfig,
) -> Result<(Velocity, VelocityTape)> {
    let (tape, v) = match cfg.velocity {
        VelocityMode::Direct => {
            let tape = field.record(input, Tangents::Time);
            let t = tape.tangent(TIME_INPUT).unwrap();
            let dpdt = Vector3::new(t[0], t[1], t[2]);
            let dqdt = Vector4::new(t[3], t[4], t[5], t[6]);
            let v = Velocity {
                position: dpdt,
                rotation: dqdt,
            };
            (
                VelocityTape {
                    warp: tape,
                    mode: cfg.velocity,
                    jp: Matrix3::identity(),
                    jq: Matrix4::identity(),
                    jp_pinv: Matrix3::identity(),
                    jq_pinv: Matrix4::identity(),
                    dpdt,
                    dqdt,
                },
                v,
            )
        }
        VelocityMode::Pseudoinverse => {
            let tape = field.record(input, Tangents::All);
            let j = tape.jacobians();
            let jp_pinv = pseudo_inverse(&j.jp, cfg.pinv_tolerance)?;
            let jq_pinv = pseudo_inverse(&j.jq, cfg.pinv_tolerance)?;
            let v = Velocity {
                position: jp_pinv * j.dpdt,
                rotation: jq_pinv * j.dqdt,
            };
            (
                VelocityTape {
                    warp: tape,
                    mode: cfg.velocity,
                    jp: j.jp,
                    jq: j.jq,
                    jp_pinv,
                    jq_pinv,
                    dpdt: j.dpdt,
                    dqdt: j.dqdt,
                },
                v,
            )
        }
    };
    check_finite(&v)?;
    Ok((v, tape))
}

pub fn velocity_at(field: &WarpField, input: &WarpInput, cfg: &IntegratorConfig) -> Result<Velocity> {
    velocity_with_tape(field, input, cfg).map(|(v, _)| v)
}

/// Reverse pass of a velocity evaluation: accumulates parameter gradients into
/// `grad` and returns the gradient with respect to the network input.
pub fn velocity_vjp(
    field: &WarpField,
    tape: &VelocityTape,
    v_grad: &Velocity,
    grad: &mut [f64],
) -> InputGrad {
    let dirs = tape.warp.directions().len();
    let mut tan = vec![0.0; dirs * OUTPUTS];
    match tape.mode {
        VelocityMode::Direct => {
            for r in 0..3 {
                tan[r] = v_grad.position[r];
            }
            for r in 0..4 {
                tan[3 + r] = v_grad.rotation[r];
            }
        }
        VelocityMode::Pseudoinverse => {
            let dpdt_bar = tape.jp_pinv.transpose() * v_grad.position;
            let dqdt_bar = tape.jq_pinv.transpose() * v_grad.rotation;
            let jp_bar = pseudo_inverse_vjp(&tape.jp, &tape.jp_pinv, &(v_grad.position * tape.dpdt.transpose()));
            let jq_bar = pseudo_inverse_vjp(&tape.jq, &tape.jq_pinv, &(v_grad.rotation * tape.dqdt.transpose()));
            for c in 0..3 {
                for r in 0..3 {
                    tan[c * OUTPUTS + r] = jp_bar[(r, c)];
                }
            }
            for c in 0..4 {
                for r in 0..4 {
                    tan[(3 + c) * OUTPUTS + 3 + r] = jq_bar[(r, c)];
                }
            }
            for r in 0..3 {
                tan[TIME_INPUT * OUTPUTS + r] = dpdt_bar[r];
            }
            for r in 0..4 {
                tan[TIME_INPUT * OUTPUTS + 3 + r] = dqdt_bar[r];
            }
        }
    }
    field.backward(&tape.warp, &[0.0; OUTPUTS], &tan, grad)
}
