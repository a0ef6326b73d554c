use nalgebra::{Vector2, Vector3, Vector4};

use super::*;
use crate::raster::{render, splat_gaussians, RasterConfig};
use crate::scene::ProjectionConfig;

fn small_spec() -> SceneSpec {
    SceneSpec {
        static_count: 5,
        dynamic_count: 2,
        cameras: 2,
        timestamps: 4,
        width: 24,
        height: 20,
        focal: 30.0,
        ..SceneSpec::basic()
    }
}

#[test]
fn static_spec_has_constant_trajectories_and_zero_flow() {
    let spec = SceneSpec {
        dynamic_count: 0,
        ..small_spec()
    };
    let data = SyntheticDataset::generate(&spec, 3).unwrap();
    for s in data.true_trajectories() {
        assert_eq!(s.position, data.scene.canonical[s.gaussian_id].position);
    }
    for row in &data.frames {
        for f in row {
            assert!(f.flow.iter().chain(&f.backward_flow).all(|&v| v == 0.0));
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = SyntheticDataset::generate(&small_spec(), 9).unwrap();
    let b = SyntheticDataset::generate(&small_spec(), 9).unwrap();
    assert_eq!(a, b);
    let c = SyntheticDataset::generate(&small_spec(), 10).unwrap();
    assert_ne!(a.scene.canonical, c.scene.canonical);
}

#[test]
fn sinusoidal_positions_follow_the_closed_form() {
    let scene = generate_scene(&SceneSpec::basic(), 1).unwrap();
    assert_eq!(scene.dynamic_ids(), vec![30, 31, 32]);
    for id in scene.dynamic_ids() {
        let Motion::Sinusoidal { amplitude, omega, phase } = scene.motions[id] else {
            panic!("expected sinusoidal motion");
        };
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let want = Vector3::from(amplitude) * (omega * t + phase).sin() + scene.anchors[id];
            assert!((scene.position(id, t) - want).norm() < 1e-15);
        }
    }
}

#[test]
fn oracle_state_at_zero_is_canonical() {
    let scene = generate_scene(&SceneSpec::named("circular").unwrap(), 2).unwrap();
    assert_eq!(oracle_state(&scene, 0.0).unwrap(), scene.canonical);
    assert!(oracle_state(&scene, 1.5).is_err());
}

#[test]
fn linear_motion_moves_by_velocity_times_time() {
    let scene = generate_scene(&SceneSpec::named("linear").unwrap(), 4).unwrap();
    for id in scene.dynamic_ids() {
        let Motion::Linear { velocity } = scene.motions[id] else {
            panic!("expected linear motion");
        };
        let p = oracle_state(&scene, 0.35).unwrap()[id].position;
        assert!((p - (scene.canonical[id].position + Vector3::from(velocity) * 0.35)).norm() < 1e-15);
    }
}

#[test]
fn circular_motion_keeps_distance_to_center() {
    let scene = generate_scene(&SceneSpec::named("circular").unwrap(), 5).unwrap();
    for id in scene.dynamic_ids() {
        let Motion::Circular { center, axis, .. } = scene.motions[id] else {
            panic!("expected circular motion");
        };
        let c = Vector3::from(center);
        let n = Vector3::from(axis).normalize();
        let radial = |p: Vector3<f64>| {
            let d = p - c;
            (d - n * d.dot(&n)).norm()
        };
        let r0 = radial(scene.position(id, 0.0));
        for k in 1..=20 {
            let p = scene.position(id, k as f64 / 20.0);
            assert!(((p - c).norm() - (scene.position(id, 0.0) - c).norm()).abs() < 1e-12);
            assert!((radial(p) - r0).abs() < 1e-12);
        }
    }
}

#[test]
fn single_splat_image_matches_closed_form() {
    let cam = Camera::look_at(Vector3::new(0.0, -4.0, 0.0), Vector3::zeros(), Vector3::z(), 30.0, 24, 20).unwrap();
    let g = Gaussian::from_decoded(
        Vector3::new(0.1, 0.0, -0.05),
        Vector4::new(1.0, 0.0, 0.0, 0.0),
        Vector3::repeat(0.2),
        0.8,
        Vector3::new(0.9, 0.5, 0.1),
    );
    let scene = SyntheticScene {
        canonical: vec![g.clone()],
        anchors: vec![g.position],
        motions: vec![Motion::Static],
        cameras: vec![cam.clone()],
    };
    let spec = SceneSpec {
        static_count: 1,
        dynamic_count: 0,
        cameras: 1,
        width: 24,
        height: 20,
        timestamps: 2,
        ..SceneSpec::basic()
    };
    let data = bake_references(&spec, 0, scene).unwrap();
    // isotropic covariance: Σ₂ = σ² J Jᵀ + dilation
    let pc = cam.to_camera(&g.position);
    let mu = Vector2::new(cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy);
    let jx = Vector3::new(cam.fx / pc.z, 0.0, -cam.fx * pc.x / (pc.z * pc.z));
    let jy = Vector3::new(0.0, cam.fy / pc.z, -cam.fy * pc.y / (pc.z * pc.z));
    let (vx, vy, cxy) = (0.04 * jx.norm_squared() + 0.3, 0.04 * jy.norm_squared() + 0.3, 0.04 * jx.dot(&jy));
    let det = vx * vy - cxy * cxy;
    let img = &data.frames[0][0].image;
    for row in 0..20 {
        for col in 0..24 {
            let d = Vector2::new(col as f64, row as f64) - mu;
            let q = (vy * d.x * d.x - 2.0 * cxy * d.x * d.y + vx * d.y * d.y) / det;
            let mut alpha = (0.8 * (-0.5 * q).exp()).min(0.999);
            if alpha < 1.0 / 255.0 {
                alpha = 0.0;
            }
            for ch in 0..3 {
                let got = img[3 * (row * 24 + col) + ch];
                assert!((got - g.color[ch] * alpha).abs() <= 0.5 / 255.0 + 1e-12, "pixel ({col}, {row})");
            }
        }
    }
    assert!(img.iter().any(|&v| v > 0.5));
}

#[test]
fn dataset_round_trips_bit_exactly() {
    let data = SyntheticDataset::generate(&small_spec(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    for name in ["scene.json", "cameras.json", "trajectories.csv", "frames/cam1_t3.ppm", "frames/cam0_t0.bflow"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let back = SyntheticDataset::read(dir.path()).unwrap();
    assert_eq!(back.frames, data.frames);
    assert_eq!(back.times, data.times);
    assert_eq!(back.scene.cameras, data.scene.cameras);
    assert_eq!(back.scene.motions, data.scene.motions);
    let dir2 = tempfile::tempdir().unwrap();
    back.write(dir2.path()).unwrap();
    for name in ["scene.json", "cameras.json", "trajectories.csv", "frames/cam1_t2.flow", "frames/cam0_t1.depth"] {
        assert_eq!(
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(dir2.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn baked_depth_is_positive_where_covered() {
    let data = SyntheticDataset::generate(&small_spec(), 13).unwrap();
    let states = oracle_state(&data.scene, data.times[1]).unwrap();
    let cam = &data.scene.cameras[0];
    let splats = splat_gaussians(&states, None, cam, &ProjectionConfig::default()).unwrap();
    let out = render(&splats, cam.width, cam.height, &RasterConfig::default());
    let depth = &data.frames[0][1].depth;
    for i in 0..out.pixel_count() {
        if out.alpha[i] > 1e-6 {
            assert!(depth[i] > 0.0);
        } else {
            assert_eq!(depth[i], 0.0);
        }
    }
}

#[test]
fn first_and_last_frames_have_zero_one_sided_flow() {
    let data = SyntheticDataset::generate(&small_spec(), 14).unwrap();
    let last = data.times.len() - 1;
    for row in &data.frames {
        assert!(row[0].backward_flow.iter().all(|&v| v == 0.0));
        assert!(row[last].flow.iter().all(|&v| v == 0.0));
    }
    assert!(data.frames.iter().any(|row| row[0].flow.iter().any(|&v| v != 0.0)));
}
