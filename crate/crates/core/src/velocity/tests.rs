use nalgebra::{Vector3, Vector4};

use super::*;
use crate::scene::{normalize_quaternion, Camera};
use crate::warp::{Activation, WarpConfig, WarpInput, TIME_INPUT};

fn small_config() -> WarpConfig {
    WarpConfig {
        position_bands: 2,
        time_bands: 2,
        hidden_layers: 2,
        width: 8,
        activation: Activation::Tanh,
    }
}

/// Random but mild field: the Jacobians stay close to the identity.
fn mild_field(seed: u64) -> WarpField {
    let mut f = WarpField::random(small_config(), seed);
    let last = f.layer_count() - 1;
    let (w, b) = f.layer_mut(last);
    w.iter_mut().for_each(|v| *v *= 0.15);
    b.iter_mut().for_each(|v| *v *= 0.15);
    f
}

fn gaussian() -> Gaussian {
    Gaussian::from_decoded(
        Vector3::new(0.3, -0.1, 0.25),
        normalize_quaternion(&Vector4::new(0.9, 0.2, -0.1, 0.3)),
        Vector3::new(0.1, 0.2, 0.15),
        0.7,
        Vector3::new(0.2, 0.5, 0.8),
    )
}

/// Output-layer-only field with `δp_x = a·sin(πt)`, so `v_x = aπ cos(πt)`.
fn sine_field(a: f64) -> WarpField {
    let cfg = WarpConfig {
        position_bands: 0,
        time_bands: 1,
        hidden_layers: 0,
        width: 1,
        activation: Activation::Softplus,
    };
    let mut f = WarpField::zeros(cfg);
    let col = f.input_column(TIME_INPUT) + 1;
    let (w, _) = f.layer_mut(0);
    w[col] = a;
    f
}

fn cfg(velocity: VelocityMode, state: StateMode, steps: usize) -> IntegratorConfig {
    IntegratorConfig {
        steps,
        velocity,
        state,
        ..Default::default()
    }
}

#[test]
fn zero_warp_has_zero_velocity() {
    let f = WarpField::new(WarpConfig::default(), 1);
    for mode in [VelocityMode::Direct, VelocityMode::Pseudoinverse] {
        let v = velocity(&f, &gaussian(), 0.4, &cfg(mode, StateMode::Canonical, 1)).unwrap();
        assert_eq!(v, Velocity::default());
    }
}

#[test]
fn direct_velocity_matches_time_differences() {
    let f = mild_field(5);
    let g = gaussian();
    let v = velocity(&f, &g, 0.45, &cfg(VelocityMode::Direct, StateMode::Canonical, 1)).unwrap();
    let h = 1e-5;
    let a = crate::warp::warp_forward(&f, &g, 0.45 + h).to_array();
    let b = crate::warp::warp_forward(&f, &g, 0.45 - h).to_array();
    for r in 0..3 {
        assert!(((a[r] - b[r]) / (2.0 * h) - v.position[r]).abs() < 1e-7);
    }
    for r in 0..4 {
        assert!(((a[3 + r] - b[3 + r]) / (2.0 * h) - v.rotation[r]).abs() < 1e-7);
    }
}

#[test]
fn pseudoinverse_equals_direct_when_warp_ignores_position() {
    let mut f = mild_field(9);
    f.mask_position_input();
    let g = gaussian();
    let d = velocity(&f, &g, 0.6, &cfg(VelocityMode::Direct, StateMode::Canonical, 1)).unwrap();
    let p = velocity(&f, &g, 0.6, &cfg(VelocityMode::Pseudoinverse, StateMode::Canonical, 1)).unwrap();
    assert!((d.position - p.position).norm() < 1e-12);
}

#[test]
fn pseudoinverse_solves_the_jacobian_system() {
    let f = mild_field(2);
    let g = gaussian();
    let j = crate::warp::warp_jacobians(&f, &g, 0.3);
    let v = velocity(&f, &g, 0.3, &cfg(VelocityMode::Pseudoinverse, StateMode::Canonical, 1)).unwrap();
    assert!((j.jp * v.position - j.dpdt).norm() < 1e-10);
    assert!((j.jq * v.rotation - j.dqdt).norm() < 1e-10);
}

fn rk4_error(state: StateMode, steps: usize) -> f64 {
    let a = 1.0 / std::f64::consts::PI;
    let f = sine_field(a);
    let g = gaussian();
    let c = cfg(VelocityMode::Direct, state, steps);
    let end = integrate(&f, &g, &MotionState::of(&g), 0.05, 0.6, &c).unwrap();
    let pi = std::f64::consts::PI;
    let exact = g.position.x + a * ((pi * 0.65).sin() - (pi * 0.05).sin());
    (end.position.x - exact).abs()
}

#[test]
fn rk4_is_fourth_order_on_a_smooth_field() {
    for state in [StateMode::Canonical, StateMode::Feedback] {
        let ratio = rk4_error(state, 2) / rk4_error(state, 4);
        assert!((8.0..=32.0).contains(&ratio), "{state:?}: ratio {ratio}");
    }
}

#[test]
fn analytic_cosine_field_converges_at_fourth_order() {
    let src = AnalyticVelocity(|x: &WarpInput| Velocity {
        position: Vector3::new(x.time.cos(), 0.0, 0.0),
        rotation: Vector4::zeros(),
    });
    let g = gaussian();
    let err = |n: usize| {
        let c = cfg(VelocityMode::Direct, StateMode::Canonical, n);
        let (end, _) = integrate_source(&src, &g, &MotionState::of(&g), 0.1, 0.8, &c).unwrap();
        (end.position.x - g.position.x - (0.9f64.sin() - 0.1f64.sin())).abs()
    };
    let ratio = err(2) / err(4);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn forward_then_backward_returns_to_start() {
    let f = mild_field(4);
    let g = gaussian();
    let c = cfg(VelocityMode::Direct, StateMode::Canonical, 4);
    let start = MotionState::of(&crate::warp::deform(&f, &g, 0.3));
    let mid = integrate(&f, &g, &start, 0.3, 0.2, &c).unwrap();
    let back = integrate(&f, &g, &mid, 0.5, -0.2, &c).unwrap();
    assert!((back.position - start.position).norm() < 1e-12);
}

#[test]
fn integrated_rotation_is_unit() {
    let f = mild_field(6);
    let g = gaussian();
    for mode in [VelocityMode::Direct, VelocityMode::Pseudoinverse] {
        for state in [StateMode::Canonical, StateMode::Feedback] {
            let end = integrate(&f, &g, &MotionState::of(&g), 0.1, 0.5, &cfg(mode, state, 3)).unwrap();
            assert!((end.rotation.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn without_rotation_the_quaternion_is_only_normalized() {
    let f = mild_field(6);
    let g = gaussian();
    let c = IntegratorConfig {
        rotate: false,
        ..Default::default()
    };
    let end = integrate(&f, &g, &MotionState::of(&g), 0.1, 0.5, &c).unwrap();
    assert!((end.rotation - normalize_quaternion(&g.rotation)).norm() < 1e-15);
}

/// Scalar objective over the end state, shared with its reverse pass.
fn objective(end: &MotionState) -> f64 {
    let a = Vector3::new(0.7, -1.3, 0.4);
    let b = Vector4::new(0.2, 0.9, -0.5, 0.3);
    a.dot(&end.position) + b.dot(&end.rotation)
}

fn objective_grad() -> MotionState {
    MotionState {
        position: Vector3::new(0.7, -1.3, 0.4),
        rotation: Vector4::new(0.2, 0.9, -0.5, 0.3),
    }
}

fn check_vjp(mode: VelocityMode, state: StateMode) {
    let f = mild_field(11);
    let g = gaussian();
    let c = cfg(mode, state, 2);
    let start = MotionState {
        position: g.position + Vector3::new(0.02, -0.01, 0.03),
        rotation: g.rotation + Vector4::new(0.01, 0.0, -0.02, 0.01),
    };
    let (t, dt) = (0.25, 0.3);
    let (_, tape) = integrate_with_tape(&f, &g, &start, t, dt, &c).unwrap();
    let mut grad = vec![0.0; f.param_count()];
    let ig = integrate_vjp(&f, &tape, &objective_grad(), &mut grad);

    let eval = |f: &WarpField, g: &Gaussian, s: &MotionState| objective(&integrate(f, g, s, t, dt, &c).unwrap());
    let h = 1e-6;
    let close = |fd: f64, an: f64, what: &str| {
        assert!(
            (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3),
            "{mode:?}/{state:?} {what}: fd {fd} analytic {an}"
        );
    };

    let mut rng_dir: Vec<f64> = (0..f.param_count()).map(|i| ((i * 7919 % 101) as f64 / 50.0) - 1.0).collect();
    let norm = rng_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    rng_dir.iter_mut().for_each(|v| *v /= norm);
    let (mut fa, mut fb) = (f.clone(), f.clone());
    for i in 0..f.param_count() {
        fa.params_mut()[i] += h * rng_dir[i];
        fb.params_mut()[i] -= h * rng_dir[i];
    }
    let fd = (eval(&fa, &g, &start) - eval(&fb, &g, &start)) / (2.0 * h);
    let an: f64 = grad.iter().zip(&rng_dir).map(|(a, b)| a * b).sum();
    close(fd, an, "params");

    for k in 0..3 {
        let (mut a, mut b) = (start, start);
        a.position[k] += h;
        b.position[k] -= h;
        close((eval(&f, &g, &a) - eval(&f, &g, &b)) / (2.0 * h), ig.start.position[k], "start p");
        let (mut ga, mut gb) = (g.clone(), g.clone());
        ga.position[k] += h;
        gb.position[k] -= h;
        close(
            (eval(&f, &ga, &start) - eval(&f, &gb, &start)) / (2.0 * h),
            ig.canonical_position[k],
            "canonical p",
        );
    }
    for k in 0..4 {
        let (mut a, mut b) = (start, start);
        a.rotation[k] += h;
        b.rotation[k] -= h;
        close((eval(&f, &g, &a) - eval(&f, &g, &b)) / (2.0 * h), ig.start.rotation[k], "start q");
        let (mut ga, mut gb) = (g.clone(), g.clone());
        ga.rotation[k] += h;
        gb.rotation[k] -= h;
        close(
            (eval(&f, &ga, &start) - eval(&f, &gb, &start)) / (2.0 * h),
            ig.canonical_rotation[k],
            "canonical q",
        );
    }
}

#[test]
fn integration_vjp_matches_finite_differences() {
    for mode in [VelocityMode::Direct, VelocityMode::Pseudoinverse] {
        for state in [StateMode::Canonical, StateMode::Feedback] {
            check_vjp(mode, state);
        }
    }
}

#[test]
fn scene_flow_decomposes_into_pixels_and_depth() {
    let cam = Camera::look_at(
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        50.0,
        64,
        64,
    )
    .unwrap();
    let p = Vector3::zeros();
    let (du, dz) = decompose_scene_flow(&Vector3::new(0.0, 0.0, 1.0), &p, &cam, 0.01).unwrap();
    assert!(du.norm() < 1e-12);
    assert!((dz - 1.0).abs() < 1e-12);
    let (du, dz) = decompose_scene_flow(&Vector3::new(0.4, 0.0, 0.0), &p, &cam, 0.01).unwrap();
    assert!((du.norm() - 50.0 * 0.4 / 4.0).abs() < 1e-9);
    assert!(dz.abs() < 1e-12);
    assert!(decompose_scene_flow(&Vector3::new(0.0, 0.0, -5.0), &p, &cam, 0.01).is_none());
}

#[test]
fn scene_flow_of_constant_velocity_field() {
    let f = sine_field(0.0);
    let g = gaussian();
    let sf = scene_flow(&f, &g, 0.2, 0.3, &IntegratorConfig::default()).unwrap();
    assert_eq!(sf.displacement, Vector3::zeros());
    assert!((sf.end_covariance - g.covariance().unwrap()).norm() < 1e-12);
}

#[test]
fn trajectory_csv_round_trips() {
    let f = sine_field(0.2);
    let g = gaussian();
    let times: Vec<f64> = (0..5).map(|j| j as f64 / 4.0).collect();
    let samples = integrated_trajectory(&f, &g, 3, &times, &IntegratorConfig::default()).unwrap();
    assert_eq!(samples.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    write_trajectory_csv(&path, &samples).unwrap();
    assert_eq!(read_trajectory_csv(&path).unwrap(), samples);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("gaussian_id,t,x,y,z\n"));
}
