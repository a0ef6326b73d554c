use nalgebra::{Vector3, Vector4};

use super::*;
use crate::losses::{LossWeights, RankingConfig};
use crate::synthetic::{bake_references, Motion, SceneSpec, SyntheticScene};
use crate::velocity::{StateMode, VelocityMode};
use crate::warp::{Activation, WarpConfig};

fn tiny_scene(count: usize, size: usize) -> (SceneSpec, SyntheticScene) {
    let spec = SceneSpec {
        static_count: 1,
        dynamic_count: count - 1,
        cameras: 1,
        timestamps: 3,
        width: size,
        height: size,
        focal: 1.5 * size as f64,
        ..SceneSpec::basic()
    };
    let cam = Camera::look_at(Vector3::new(0.3, -4.0, 0.5), Vector3::zeros(), Vector3::z(), 1.5 * size as f64, size, size).unwrap();
    let mut canonical = Vec::new();
    let mut anchors = Vec::new();
    let mut motions = Vec::new();
    for k in 0..count {
        let p = Vector3::new(-0.5 + 0.45 * k as f64, 0.2 * k as f64, 0.15 - 0.2 * k as f64);
        canonical.push(Gaussian::from_decoded(
            p,
            Vector4::new(0.9, 0.1 * k as f64, -0.2, 0.1),
            Vector3::new(0.35, 0.3, 0.4 - 0.05 * k as f64),
            0.7,
            Vector3::new(0.8, 0.3 + 0.2 * k as f64, 0.2),
        ));
        anchors.push(p);
        motions.push(if k == 0 {
            Motion::Static
        } else {
            Motion::Linear {
                velocity: [0.4, 0.1 * k as f64, -0.2],
            }
        });
    }
    (
        spec,
        SyntheticScene {
            canonical,
            anchors,
            motions,
            cameras: vec![cam],
        },
    )
}

fn tiny_dataset(count: usize) -> SyntheticDataset {
    sized_dataset(count, 8)
}

fn sized_dataset(count: usize, size: usize) -> SyntheticDataset {
    let (spec, scene) = tiny_scene(count, size);
    bake_references(&spec, 0, scene).unwrap()
}

fn tiny_model(data: &SyntheticDataset) -> Model {
    let cfg = WarpConfig {
        position_bands: 2,
        time_bands: 2,
        hidden_layers: 2,
        width: 8,
        activation: Activation::Softplus,
    };
    let mut field = WarpField::random(cfg, 5);
    let last = field.layer_count() - 1;
    let (w, b) = field.layer_mut(last);
    w.iter_mut().for_each(|v| *v *= 0.2);
    b.iter_mut().for_each(|v| *v *= 0.2);
    let gaussians = data
        .scene
        .canonical
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut g = g.clone();
            g.position += Vector3::new(0.05, -0.03, 0.04) * (i as f64 + 1.0);
            g.opacity_logit += 0.3;
            g
        })
        .collect();
    Model { gaussians, field }
}

fn objective_cfg(velocity: VelocityMode, state: StateMode) -> ObjectiveConfig {
    ObjectiveConfig {
        weights: LossWeights {
            alpha: 0.7,
            beta: 1.3,
            margin: 1e-3,
        },
        ranking: RankingConfig {
            pairs: 64,
            window: 6,
            dead_band: 1e-4,
        },
        dssim: 0.0,
        integrator: IntegratorConfig {
            steps: 2,
            velocity,
            state,
            ..Default::default()
        },
        scene_flow: true,
        mask: FlowMask::All,
        pair_seed: 11,
        projection: ProjectionConfig::default(),
        raster: RasterConfig::default(),
    }
}

fn total(model: &Model, data: &SyntheticDataset, sample: Sample, cfg: &ObjectiveConfig) -> f64 {
    objective(&model.field, &model.gaussians, data, sample, cfg).unwrap().0.total
}

fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}

fn check_objective_fd(velocity: VelocityMode, state: StateMode, size: usize, dssim: f64) {
    let data = sized_dataset(2, size);
    let model = tiny_model(&data);
    let cfg = ObjectiveConfig {
        dssim,
        ..objective_cfg(velocity, state)
    };
    let sample = Sample::new(0, 1);
    let (terms, grad) = objective(&model.field, &model.gaussians, &data, sample, &cfg).unwrap();
    assert!(terms.flow > 0.0 && terms.photometric > 0.0);
    let h = 1e-6;
    for k in 0..model.field.param_count() {
        let mut plus = model.clone();
        plus.field.params_mut()[k] += h;
        let mut minus = model.clone();
        minus.field.params_mut()[k] -= h;
        let fd = (total(&plus, &data, sample, &cfg) - total(&minus, &data, sample, &cfg)) / (2.0 * h);
        let a = grad.field[k];
        assert!(close(a, fd, 1e-3, 1e-7), "weight {k}: analytic {a} fd {fd}");
    }
    for i in 0..model.gaussians.len() {
        let g = &grad.gaussians[i];
        let analytic: Vec<f64> = g
            .position
            .iter()
            .chain(g.rotation.iter())
            .chain(g.log_scale.iter())
            .chain(std::iter::once(&g.opacity_logit))
            .chain(g.color.iter())
            .copied()
            .collect();
        for (k, a) in analytic.iter().enumerate() {
            let bump = |m: &mut Model, d: f64| {
                let g = &mut m.gaussians[i];
                match k {
                    0..=2 => g.position[k] += d,
                    3..=6 => g.rotation[k - 3] += d,
                    7..=9 => g.log_scale[k - 7] += d,
                    10 => g.opacity_logit += d,
                    _ => g.color[k - 11] += d,
                }
            };
            let mut plus = model.clone();
            bump(&mut plus, h);
            let mut minus = model.clone();
            bump(&mut minus, -h);
            let fd = (total(&plus, &data, sample, &cfg) - total(&minus, &data, sample, &cfg)) / (2.0 * h);
            assert!(close(*a, fd, 1e-3, 1e-7), "gaussian {i} param {k}: analytic {a} fd {fd}");
        }
    }
}

#[test]
fn objective_gradient_matches_fd_pseudoinverse_canonical() {
    check_objective_fd(VelocityMode::Pseudoinverse, StateMode::Canonical, 8, 0.0);
}

#[test]
fn objective_gradient_with_dssim_matches_fd() {
    check_objective_fd(VelocityMode::Pseudoinverse, StateMode::Feedback, 12, 0.3);
}

#[test]
fn objective_gradient_matches_fd_direct_feedback() {
    check_objective_fd(VelocityMode::Direct, StateMode::Feedback, 8, 0.0);
}

#[test]
fn zero_scene_flow_weights_reduce_to_photometric_only() {
    let data = tiny_dataset(2);
    let model = tiny_model(&data);
    let mut cfg = objective_cfg(VelocityMode::Pseudoinverse, StateMode::Canonical);
    cfg.weights.alpha = 0.0;
    cfg.weights.beta = 0.0;
    let sample = Sample::new(0, 2);
    let (a, ga) = objective(&model.field, &model.gaussians, &data, sample, &cfg).unwrap();
    cfg.scene_flow = false;
    let (b, gb) = objective(&model.field, &model.gaussians, &data, sample, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    assert_eq!(a.total, a.photometric);
}

#[test]
fn end_frames_use_one_neighbor() {
    let data = tiny_dataset(2);
    let model = tiny_model(&data);
    let cfg = objective_cfg(VelocityMode::Direct, StateMode::Canonical);
    for frame in [0, 2] {
        let (t, _) = objective(&model.field, &model.gaussians, &data, Sample::new(0, frame), &cfg).unwrap();
        assert!(t.total.is_finite() && t.flow > 0.0);
    }
}

fn quick_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        warmup: iterations / 2,
        warp: WarpConfig {
            position_bands: 2,
            time_bands: 2,
            hidden_layers: 1,
            width: 8,
            activation: Activation::Softplus,
        },
        integrator: IntegratorConfig {
            steps: 1,
            ..Default::default()
        },
        ranking: RankingConfig {
            pairs: 32,
            ..Default::default()
        },
        holdout_cameras: vec![],
        log_every: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let data = tiny_dataset(2);
    let cfg = quick_config(0);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&data, &cfg, Some(dir.path())).unwrap();
    assert_eq!(out.model, Model::init(&data, &cfg));
    assert!(out.log.is_empty());
    let (back, cams, cfg_back) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(cfg_back, cfg);
    assert_eq!(cams, data.scene.cameras);
    assert_eq!(back.field, out.model.field);
    for (a, b) in back.gaussians.iter().zip(&out.model.gaussians) {
        assert_eq!(a.position, b.position);
        assert!((a.log_scale - b.log_scale).norm() < 1e-12);
        assert!((a.opacity_logit - b.opacity_logit).abs() < 1e-9);
    }
}

#[test]
fn training_is_deterministic_and_writes_the_checkpoint() {
    let data = tiny_dataset(2);
    let cfg = quick_config(12);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = train(&data, &cfg, Some(a.path())).unwrap();
    let rb = train(&data, &cfg, Some(b.path())).unwrap();
    assert_eq!(ra.model, rb.model);
    for f in [METRICS_FILE, WARP_FILE, SCENE_FILE, CONFIG_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(ra.log.len(), 12);
    assert!(ra.log[..6].iter().all(|r| r.flow == 0.0 && r.depth == 0.0));
    assert!(ra.log[6..].iter().any(|r| r.flow > 0.0));
    let logged = crate::losses::read_loss_log(&a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(logged.len(), 12);
}

#[test]
fn invalid_config_is_rejected() {
    let data = tiny_dataset(2);
    let mut cfg = quick_config(10);
    cfg.warmup = 11;
    assert!(matches!(train(&data, &cfg, None), Err(Error::Config(_))));
    let mut cfg = quick_config(10);
    cfg.gaussian_lr.color = 0.0;
    assert!(train(&data, &cfg, None).is_err());
    let mut cfg = quick_config(10);
    cfg.holdout_cameras = vec![0];
    assert!(train(&data, &cfg, None).is_err());
}

#[test]
fn divergence_reports_the_iteration() {
    let data = tiny_dataset(2);
    let mut cfg = quick_config(5);
    cfg.gaussian_lr.position = 1e300;
    cfg.gaussian_lr.scale = 1e300;
    let err = train(&data, &cfg, None).err().unwrap();
    assert!(matches!(err, Error::TrainingDiverged { .. }), "{err}");
}

#[test]
fn evaluation_of_the_true_state_is_near_perfect() {
    let data = sized_dataset(3, 16);
    let model = Model {
        gaussians: data.scene.canonical.clone(),
        field: WarpField::zeros(quick_config(0).warp),
    };
    let m = evaluate(&model, &data, &[0]).unwrap();
    assert_eq!(m.views.len(), 3);
    // frame 0 is rendered from the exact canonical state; only 8-bit quantization remains
    assert!(m.views[0].psnr > 45.0, "{:?}", m.views[0]);
    assert!(m.views[2].psnr < m.views[0].psnr);
    assert!(evaluate(&model, &data, &[4]).is_err());
}

#[test]
fn identity_warp_has_zero_travel_and_static_endpoint_error() {
    let data = tiny_dataset(3);
    let model = Model {
        gaussians: data.scene.canonical.clone(),
        field: WarpField::zeros(quick_config(0).warp),
    };
    let icfg = IntegratorConfig::default();
    let travel = travel_distances(&model, &[0, 1, 2], &data.times, &icfg).unwrap();
    assert_eq!(travel, vec![0.0; 3]);
    let err = trajectory_errors(&model, &data, &[0, 1], &icfg).unwrap();
    assert_eq!(err[0], 0.0);
    // linear motion u = (0.4, 0.1, −0.2): mean of ‖u‖·t over t = 0, ½, 1
    let want: f64 = Vector3::new(0.4, 0.1, -0.2).norm() * 0.5;
    assert!((err[1] - want).abs() < 1e-12);
}

#[test]
fn percentile_uses_nearest_rank() {
    let v = [5.0, 1.0, 4.0, 2.0, 3.0];
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 20.0), 1.0);
    assert_eq!(percentile(&v, 50.0), 3.0);
    assert_eq!(percentile(&v, 95.0), 5.0);
    assert_eq!(percentile(&v, 100.0), 5.0);
}

/// Every Gaussian moves by `δp_x = a·sin(πt)`, which a one-layer field reproduces exactly.
fn sine_world(a: f64, size: usize, timestamps: usize) -> (SyntheticDataset, Model) {
    let (mut spec, mut scene) = tiny_scene(3, size);
    spec.timestamps = timestamps;
    for m in &mut scene.motions {
        *m = Motion::Sinusoidal {
            amplitude: [a, 0.0, 0.0],
            omega: std::f64::consts::PI,
            phase: 0.0,
        };
    }
    let data = bake_references(&spec, 0, scene).unwrap();
    let cfg = WarpConfig {
        position_bands: 0,
        time_bands: 1,
        hidden_layers: 0,
        width: 1,
        activation: Activation::Softplus,
    };
    let mut field = WarpField::zeros(cfg);
    let col = field.input_column(crate::warp::TIME_INPUT) + 1;
    field.layer_mut(0).0[col] = a;
    let model = Model {
        gaussians: data.scene.canonical.clone(),
        field,
    };
    (data, model)
}

#[test]
fn true_motion_has_near_zero_scene_flow_loss() {
    let (data, model) = sine_world(0.3, 16, 5);
    let mut cfg = objective_cfg(VelocityMode::Pseudoinverse, StateMode::Canonical);
    cfg.integrator.steps = 8;
    for frame in 0..5 {
        let (t, _) = objective(&model.field, &model.gaussians, &data, Sample::new(0, frame), &cfg).unwrap();
        assert!(t.photometric < 1e-5, "frame {frame}: {t:?}");
        assert!(t.flow < 1e-4, "frame {frame}: {t:?}");
        assert!(t.depth < 1e-3, "frame {frame}: {t:?}");
    }
}
