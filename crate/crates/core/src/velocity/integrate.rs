//! Classical RK4 integration of the analytic velocity field, with a discrete
//! adjoint for training.

use nalgebra::{Vector3, Vector4};

use super::field::{velocity_vjp, velocity_with_tape, IntegratorConfig, StateMode, Velocity, VelocityTape};
use crate::error::{Error, Result};
use crate::scene::{normalize_quaternion, normalize_quaternion_vjp, Gaussian};
use crate::warp::{InputGrad, WarpField, WarpInput};

/// Anything that yields a velocity for a network-style input `(p, q, t)`.
pub trait VelocitySource {
    type Tape;
    fn eval(&self, input: &WarpInput) -> Result<(Velocity, Self::Tape)>;
    /// Accumulates parameter gradients into `grad`, returns the input gradient.
    fn vjp(&self, tape: &Self::Tape, v_grad: &Velocity, grad: &mut [f64]) -> InputGrad;
}

/// Velocity of a warp field under a given mode.
pub struct WarpVelocity<'a> {
    pub field: &'a WarpField,
    pub cfg: IntegratorConfig,
}

impl VelocitySource for WarpVelocity<'_> {
    type Tape = VelocityTape;

    fn eval(&self, input: &WarpInput) -> Result<(Velocity, VelocityTape)> {
        velocity_with_tape(self.field, input, &self.cfg)
    }

    fn vjp(&self, tape: &VelocityTape, v_grad: &Velocity, grad: &mut [f64]) -> InputGrad {
        velocity_vjp(self.field, tape, v_grad, grad)
    }
}

/// Closed-form velocity field without parameters. Its reverse pass is zero,
/// so it is only meant for forward integration (oracles and tests).
pub struct AnalyticVelocity<F>(pub F);

impl<F: Fn(&WarpInput) -> Velocity> VelocitySource for AnalyticVelocity<F> {
    type Tape = ();

    fn eval(&self, input: &WarpInput) -> Result<(Velocity, ())> {
        Ok(((self.0)(input), ()))
    }

    fn vjp(&self, _: &(), _: &Velocity, _: &mut [f64]) -> InputGrad {
        InputGrad::default()
    }
}

/// Integrated Gaussian state: position and quaternion.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MotionState {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
}

impl MotionState {
    pub fn of(g: &Gaussian) -> Self {
        Self {
            position: g.position,
            rotation: g.rotation,
        }
    }

    fn axpy(&self, h: f64, v: &Velocity, rotate: bool) -> Self {
        Self {
            position: self.position + v.position * h,
            rotation: if rotate {
                self.rotation + v.rotation * h
            } else {
                self.rotation
            },
        }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().chain(self.rotation.iter()).all(|v| v.is_finite())
    }
}

struct Eval<T> {
    tape: T,
}

/// Everything needed to run the integration backwards.
pub struct IntegrationTape<T = VelocityTape> {
    cfg: IntegratorConfig,
    h: f64,
    /// Canonical: velocities at `t + m h/2`. Feedback: four per step.
    evals: Vec<Eval<T>>,
    /// Unnormalized quaternion after the last step.
    raw_end_rotation: Vector4<f64>,
}

fn network_input(canonical: &Gaussian, state: &MotionState, tau: f64, mode: StateMode) -> WarpInput {
    match mode {
        StateMode::Canonical => WarpInput::new(canonical.position, canonical.rotation, tau),
        StateMode::Feedback => WarpInput::new(state.position, state.rotation, tau),
    }
}

fn check_interval(t: f64, dt: f64) -> Result<()> {
    const SLACK: f64 = 1e-9;
    let end = t + dt;
    if !(t >= -SLACK && t <= 1.0 + SLACK && end >= -SLACK && end <= 1.0 + SLACK) {
        return Err(Error::Config(format!(
            "integration interval [{t}, {end}] leaves [0, 1]"
        )));
    }
    Ok(())
}

/// Advances `start` (the deformed Gaussian at `t`) to `t + dt`.
///
/// `canonical` supplies the network input when the state mode is canonical.
pub fn integrate_with_tape(
    field: &WarpField,
    canonical: &Gaussian,
    start: &MotionState,
    t: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<(MotionState, IntegrationTape)> {
    let source = WarpVelocity { field, cfg: *cfg };
    integrate_source(&source, canonical, start, t, dt, cfg)
}

/// RK4 over an arbitrary velocity source; uses `steps`, `state` and `rotate` from `cfg`.
pub fn integrate_source<S: VelocitySource>(
    source: &S,
    canonical: &Gaussian,
    start: &MotionState,
    t: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<(MotionState, IntegrationTape<S::Tape>)> {
    cfg.validate()?;
    check_interval(t, dt)?;
    let n = cfg.steps;
    let h = dt / n as f64;
    let mut y = *start;
    let mut evals = Vec::new();
    if dt == 0.0 {
        return Ok((
            y,
            IntegrationTape {
                cfg: *cfg,
                h,
                evals,
                raw_end_rotation: y.rotation,
            },
        ));
    }

    match cfg.state {
        StateMode::Canonical => {
            let mut vs = Vec::with_capacity(2 * n + 1);
            for m in 0..=2 * n {
                let tau = t + m as f64 * 0.5 * h;
                let (v, tape) = source.eval(&network_input(canonical, &y, tau, cfg.state))?;
                vs.push(v);
                evals.push(Eval { tape });
            }
            for i in 0..n {
                let (k1, k2, k4) = (&vs[2 * i], &vs[2 * i + 1], &vs[2 * i + 2]);
                y.position += (k1.position + k2.position * 2.0 + k2.position * 2.0 + k4.position) * (h / 6.0);
                if cfg.rotate {
                    y.rotation +=
                        (k1.rotation + k2.rotation * 2.0 + k2.rotation * 2.0 + k4.rotation) * (h / 6.0);
                }
                if !y.is_finite() {
                    return Err(Error::IntegrationDiverged { step: i });
                }
            }
        }
        StateMode::Feedback => {
            for i in 0..n {
                let tau = t + i as f64 * h;
                let s1 = y;
                let (k1, e1) = source.eval(&network_input(canonical, &s1, tau, cfg.state))?;
                let s2 = s1.axpy(0.5 * h, &k1, cfg.rotate);
                let (k2, e2) =
                    source.eval(&network_input(canonical, &s2, tau + 0.5 * h, cfg.state))?;
                let s3 = s1.axpy(0.5 * h, &k2, cfg.rotate);
                let (k3, e3) =
                    source.eval(&network_input(canonical, &s3, tau + 0.5 * h, cfg.state))?;
                let s4 = s1.axpy(h, &k3, cfg.rotate);
                let (k4, e4) = source.eval(&network_input(canonical, &s4, tau + h, cfg.state))?;
                y.position += (k1.position + k2.position * 2.0 + k3.position * 2.0 + k4.position) * (h / 6.0);
                if cfg.rotate {
                    y.rotation +=
                        (k1.rotation + k2.rotation * 2.0 + k3.rotation * 2.0 + k4.rotation) * (h / 6.0);
                }
                if !y.is_finite() {
                    return Err(Error::IntegrationDiverged { step: i });
                }
                evals.extend([e1, e2, e3, e4].map(|tape| Eval { tape }));
            }
        }
    }
    let raw_end_rotation = y.rotation;
    y.rotation = normalize_quaternion(&y.rotation);
    Ok((
        y,
        IntegrationTape {
            cfg: *cfg,
            h,
            evals,
            raw_end_rotation,
        },
    ))
}

pub fn integrate(
    field: &WarpField,
    canonical: &Gaussian,
    start: &MotionState,
    t: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<MotionState> {
    integrate_with_tape(field, canonical, start, t, dt, cfg).map(|(s, _)| s)
}

/// Gradients produced by [`integrate_vjp`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntegrationGrad {
    /// With respect to the start state.
    pub start: MotionState,
    /// With respect to the canonical network input (canonical mode only).
    pub canonical_position: Vector3<f64>,
    pub canonical_rotation: Vector4<f64>,
}

fn add(a: &mut MotionState, p: &Vector3<f64>, q: &Vector4<f64>) {
    a.position += p;
    a.rotation += q;
}

/// Reverse pass of [`integrate_with_tape`]. Parameter gradients are accumulated into `grad`.
pub fn integrate_vjp(
    field: &WarpField,
    tape: &IntegrationTape,
    end_grad: &MotionState,
    grad: &mut [f64],
) -> IntegrationGrad {
    let source = WarpVelocity { field, cfg: tape.cfg };
    integrate_source_vjp(&source, tape, end_grad, grad)
}

pub fn integrate_source_vjp<S: VelocitySource>(
    source: &S,
    tape: &IntegrationTape<S::Tape>,
    end_grad: &MotionState,
    grad: &mut [f64],
) -> IntegrationGrad {
    let mut out = IntegrationGrad::default();
    if tape.evals.is_empty() {
        out.start = *end_grad;
        return out;
    }
    let cfg = &tape.cfg;
    let h = tape.h;
    let n = cfg.steps;
    let mut y_bar = MotionState {
        position: end_grad.position,
        rotation: normalize_quaternion_vjp(&tape.raw_end_rotation, &end_grad.rotation),
    };
    let rot_mask = |q: Vector4<f64>| if cfg.rotate { q } else { Vector4::zeros() };

    match cfg.state {
        StateMode::Canonical => {
            for (m, eval) in tape.evals.iter().enumerate() {
                let weight = if m % 2 == 1 {
                    4.0
                } else if m == 0 || m == 2 * n {
                    1.0
                } else {
                    2.0
                } * h
                    / 6.0;
                let v_bar = Velocity {
                    position: y_bar.position * weight,
                    rotation: rot_mask(y_bar.rotation * weight),
                };
                let g = source.vjp(&eval.tape, &v_bar, grad);
                out.canonical_position += g.position;
                out.canonical_rotation += g.rotation;
            }
        }
        StateMode::Feedback => {
            for i in (0..n).rev() {
                let e = &tape.evals[4 * i..4 * i + 4];
                let scale = |s: f64| Velocity {
                    position: y_bar.position * s,
                    rotation: rot_mask(y_bar.rotation * s),
                };
                let mut k_bar = [scale(h / 6.0), scale(h / 3.0), scale(h / 3.0), scale(h / 6.0)];
                let mut acc = y_bar;
                // stage 4 → 1: s_k = y + c_k h k_{k-1}
                let coeffs = [0.0, 0.5 * h, 0.5 * h, h];
                for stage in (0..4).rev() {
                    let g = source.vjp(&e[stage].tape, &k_bar[stage], grad);
                    add(&mut acc, &g.position, &g.rotation);
                    if stage > 0 {
                        let c = coeffs[stage];
                        let prev = &mut k_bar[stage - 1];
                        prev.position += g.position * c;
                        prev.rotation += rot_mask(g.rotation * c);
                    }
                }
                y_bar = acc;
            }
        }
    }
    out.start = y_bar;
    out
}
