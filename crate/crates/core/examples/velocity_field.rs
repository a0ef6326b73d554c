//! Analytic velocities of a warp field: direct `∂W/∂t` against the
//! pseudoinverse form, finite-difference agreement, RK4 convergence and
//! scene-flow decomposition into pixel motion and depth change.
//!
//! `cargo run --release --example velocity_field`

use nalgebra::{Matrix3, Vector3, Vector4};

use splatflow::scene::{normalize_quaternion, Camera, Gaussian};
use splatflow::velocity::{
    decompose_scene_flow, integrate_source, pseudo_inverse, scene_flow, velocity, AnalyticVelocity, IntegratorConfig,
    MotionState, StateMode, Velocity, VelocityMode,
};
use splatflow::warp::{warp_forward, WarpConfig, WarpField, WarpInput};

fn main() -> splatflow::Result<()> {
    let mut field = WarpField::random(WarpConfig::default(), 3);
    let last = field.layer_count() - 1;
    let (w, b) = field.layer_mut(last);
    w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= 0.1);

    let g = Gaussian::from_decoded(
        Vector3::new(0.2, -0.3, 0.1),
        normalize_quaternion(&Vector4::new(0.9, 0.1, 0.2, -0.1)),
        Vector3::repeat(0.15),
        0.8,
        Vector3::new(0.9, 0.2, 0.1),
    );
    let t = 0.4;
    let mode = |velocity| IntegratorConfig {
        velocity,
        ..Default::default()
    };
    let direct = velocity(&field, &g, t, &mode(VelocityMode::Direct))?;
    let pinv = velocity(&field, &g, t, &mode(VelocityMode::Pseudoinverse))?;
    let h = 1e-4;
    let fd = (warp_forward(&field, &g, t + h).position - warp_forward(&field, &g, t - h).position) / (2.0 * h);
    println!("direct v_p        {:.6?}", direct.position.as_slice());
    println!("central FD of δp  {:.6?}", fd.as_slice());
    println!("pseudoinverse v_p {:.6?}", pinv.position.as_slice());

    let rank2 = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0);
    let p = pseudo_inverse(&rank2, 1e-6)?;
    println!("rank-2 pseudoinverse residual ‖M M⁺ M − M‖ = {:.2e}", (rank2 * p * rank2 - rank2).norm());

    // v(t) = (cos t, 0, 0) integrates to sin t.
    let src = AnalyticVelocity(|x: &WarpInput| Velocity {
        position: Vector3::new(x.time.cos(), 0.0, 0.0),
        rotation: Vector4::zeros(),
    });
    let start = MotionState {
        position: Vector3::zeros(),
        rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
    };
    let mut prev: Option<f64> = None;
    for steps in [1, 2, 4, 8, 16] {
        let cfg = IntegratorConfig {
            steps,
            state: StateMode::Canonical,
            ..Default::default()
        };
        let end = integrate_source(&src, &g, &start, 0.0, 1.0, &cfg)?.0;
        let err = (end.position.x - 1f64.sin()).abs();
        match prev {
            Some(p) => println!("RK4 {steps:2} steps: error {err:.3e}  ratio {:.1}", p / err),
            None => println!("RK4 {steps:2} steps: error {err:.3e}"),
        }
        prev = Some(err);
    }

    let cam = Camera::look_at(Vector3::new(0.0, -4.0, 1.0), Vector3::zeros(), Vector3::z(), 80.0, 64, 64)?;
    let flow = scene_flow(&field, &g, t, 1.0 / 23.0, &IntegratorConfig::default())?;
    if let Some((px, dz)) = decompose_scene_flow(&flow.displacement, &flow.start.position, &cam, 0.01) {
        println!("one-frame scene flow {:.2e} → pixel shift {:.4?}, depth change {dz:.2e}", flow.displacement.norm(), px.as_slice());
    }
    Ok(())
}
