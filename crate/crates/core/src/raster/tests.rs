use nalgebra::{Matrix2, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn splat(id: usize, mean: (f64, f64), cov: (f64, f64, f64), depth: f64, opacity: f64, color: (f64, f64, f64)) -> Splat {
    Splat::new(
        id,
        Vector2::new(mean.0, mean.1),
        Matrix2::new(cov.0, cov.1, cov.1, cov.2),
        depth,
        opacity,
        Vector3::new(color.0, color.1, color.2),
        None,
    )
    .unwrap()
}

fn random_splat(rng: &mut ChaCha8Rng, id: usize, size: f64, with_flow: bool) -> Splat {
    let sx: f64 = rng.random_range(0.5..4.0);
    let sy: f64 = rng.random_range(0.5..4.0);
    let rho: f64 = rng.random_range(-0.8..0.8);
    let cov = Matrix2::new(sx * sx, rho * sx * sy, rho * sx * sy, sy * sy);
    let mean = Vector2::new(rng.random_range(-4.0..size + 4.0), rng.random_range(-4.0..size + 4.0));
    let flow = with_flow.then(|| {
        let s: f64 = rng.random_range(0.7..1.4);
        FlowTarget {
            mean: mean + Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            cov: cov * s,
        }
    });
    Splat::new(
        id,
        mean,
        cov,
        rng.random_range(1.0..6.0),
        rng.random_range(0.05..1.0),
        Vector3::new(rng.random(), rng.random(), rng.random()),
        flow,
    )
    .unwrap()
}

fn random_scene(seed: u64, count: usize, size: f64, with_flow: bool) -> Vec<Splat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| random_splat(&mut rng, i, size, with_flow)).collect()
}

/// Independent single-pixel compositing written directly from the blending equations.
fn oracle_pixel(splats: &[Splat], x: Vector2<f64>, cfg: &RasterConfig) -> (Vector3<f64>, f64, Vector2<f64>, f64) {
    let mut order: Vec<&Splat> = splats.iter().collect();
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && (order[j - 1].depth, order[j - 1].id) > (order[j].depth, order[j].id) {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut alphas = Vec::new();
    for s in order {
        let d = x - s.mean;
        let inv = s.cov.try_inverse().unwrap();
        let a = (s.opacity * (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp()).min(cfg.alpha_max);
        if a >= cfg.alpha_min {
            alphas.push((s, a));
        }
    }
    let mut c = Vector3::zeros();
    let mut acc = 0.0;
    let mut f = Vector2::zeros();
    let mut dep = 0.0;
    for k in 0..alphas.len() {
        let t: f64 = alphas[..k].iter().map(|(_, a)| 1.0 - a).product();
        if t * (1.0 - alphas[k].1) < cfg.transmittance_min {
            break;
        }
        let (s, a) = alphas[k];
        let w = t * a;
        c += s.color * w;
        acc += w;
        dep += s.depth * w;
        if let Some(tg) = s.flow {
            f += (tg.cov * s.cov.try_inverse().unwrap() * (x - s.mean) + tg.mean - x) * w;
        }
    }
    (c, acc, f, dep)
}

#[test]
fn sort_orders_front_to_back_with_id_ties() {
    let a = splat(0, (0.0, 0.0), (1.0, 0.0, 1.0), 1.0, 0.5, (1.0, 1.0, 1.0));
    let b = splat(1, (0.0, 0.0), (1.0, 0.0, 1.0), 2.0, 0.5, (1.0, 1.0, 1.0));
    let c = splat(2, (0.0, 0.0), (1.0, 0.0, 1.0), 3.0, 0.5, (1.0, 1.0, 1.0));
    assert_eq!(sort_by_depth(&[a, b, c]), vec![0, 1, 2]);
    assert_eq!(sort_by_depth(&[c, b, a]), vec![2, 1, 0]);
    let mut tie = b;
    tie.id = 0;
    let mut other = b;
    other.id = 5;
    assert_eq!(sort_by_depth(&[other, tie]), vec![1, 0]);
}

proptest! {
    #[test]
    fn sort_matches_comparison_oracle(depths in prop::collection::vec(0.1f64..3.0, 0..40), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let splats: Vec<Splat> = depths
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                // quantize so ties occur
                let d = (d * 4.0).round() / 4.0;
                let mut s = random_splat(&mut rng, i, 8.0, false);
                s.depth = d;
                s
            })
            .collect();
        let mut oracle: Vec<usize> = (0..splats.len()).collect();
        oracle.sort_by(|&a, &b| splats[a].depth.partial_cmp(&splats[b].depth).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(sort_by_depth(&splats), oracle);
    }
}

#[test]
fn empty_scene_is_black() {
    let out = render(&[], 8, 6, &RasterConfig::default());
    assert!(out.color.iter().all(|&v| v == 0.0));
    assert!(out.alpha.iter().all(|&v| v == 0.0));
    assert!(out.depth.iter().all(|&v| v == 0.0));
}

#[test]
fn opaque_splat_hits_the_alpha_cap() {
    let s = splat(0, (3.0, 2.0), (1.0, 0.0, 1.0), 5.0, 1.0, (0.2, 0.4, 0.8));
    let cfg = RasterConfig::default();
    let out = render(&[s], 8, 6, &cfg);
    let i = 2 * 8 + 3;
    assert_eq!(out.alpha[i], 0.999);
    assert_eq!(&out.color[3 * i..3 * i + 3], &[0.2 * 0.999, 0.4 * 0.999, 0.8 * 0.999]);
    assert!((out.depth_raw[i] - 5.0 * 0.999).abs() < 1e-12);
    assert!((out.depth[i] - 5.0).abs() < 1e-12);
    // empty far corner keeps the zero sentinel
    let far = render(&[splat(0, (0.0, 0.0), (0.5, 0.0, 0.5), 5.0, 0.9, (1.0, 1.0, 1.0))], 40, 40, &cfg);
    assert_eq!(far.depth[40 * 40 - 1], 0.0);
}

#[test]
fn reference_matches_the_blending_oracle() {
    let cfg = RasterConfig::default();
    for seed in 0..4 {
        let splats = random_scene(seed, 6, 16.0, true);
        let out = render_reference(&splats, 16, 16, &cfg);
        for row in 0..16 {
            for col in 0..16 {
                let (c, a, f, d) = oracle_pixel(&splats, Vector2::new(col as f64, row as f64), &cfg);
                let i = row * 16 + col;
                assert!((Vector3::from_column_slice(&out.color[3 * i..3 * i + 3]) - c).norm() < 1e-12);
                assert!((out.alpha[i] - a).abs() < 1e-12);
                assert!((Vector2::from_column_slice(&out.flow_raw[2 * i..2 * i + 2]) - f).norm() < 1e-9);
                assert!((out.depth_raw[i] - d).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn tiled_render_is_bit_identical_to_reference() {
    let cfg = RasterConfig::default();
    for seed in 0..5 {
        let splats = random_scene(100 + seed, 25, 40.0, true);
        assert_eq!(render(&splats, 40, 37, &cfg), render_reference(&splats, 40, 37, &cfg));
    }
}

#[test]
fn static_scene_has_zero_flow() {
    let mut splats = random_scene(7, 10, 24.0, false);
    for s in &mut splats {
        s.flow = Some(FlowTarget { mean: s.mean, cov: s.cov });
    }
    let out = render(&splats, 24, 24, &RasterConfig::default());
    assert!(out.flow.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn translated_splat_flows_by_its_displacement() {
    let mut s = splat(0, (10.3, 9.1), (6.0, 1.5, 4.0), 3.0, 0.9, (1.0, 0.5, 0.2));
    let shift = Vector2::new(2.5, -1.25);
    s.flow = Some(FlowTarget { mean: s.mean + shift, cov: s.cov });
    let cfg = RasterConfig::default();
    let out = render(&[s], 24, 24, &cfg);
    let mut covered = 0;
    for i in 0..out.pixel_count() {
        if out.alpha[i] > cfg.normalize_eps {
            covered += 1;
            assert!((out.flow[2 * i] - shift.x).abs() < 1e-9);
            assert!((out.flow[2 * i + 1] - shift.y).abs() < 1e-9);
        }
    }
    assert!(covered > 20);
}

#[test]
fn colors_stay_within_bounds() {
    let splats = random_scene(3, 30, 32.0, false);
    let out = render(&splats, 32, 32, &RasterConfig::default());
    for i in 0..out.pixel_count() {
        assert!((0.0..=1.0).contains(&out.alpha[i]));
        for ch in 0..3 {
            assert!(out.color[3 * i + ch] >= 0.0 && out.color[3 * i + ch] <= out.alpha[i] + 1e-12);
        }
    }
}

#[test]
fn input_order_does_not_matter() {
    let splats = random_scene(9, 15, 20.0, true);
    let mut shuffled = splats.clone();
    shuffled.reverse();
    shuffled.swap(2, 7);
    let cfg = RasterConfig::default();
    assert_eq!(render(&splats, 20, 20, &cfg), render(&shuffled, 20, 20, &cfg));
}

fn random_upstream(seed: u64, pixels: usize) -> RenderGrad {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    RenderGrad {
        color: v(3 * pixels),
        alpha: v(pixels),
        flow_raw: v(2 * pixels),
        flow: v(2 * pixels),
        depth_raw: v(pixels),
        depth: v(pixels),
    }
}

fn objective(out: &RenderOutput, up: &RenderGrad) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.color, &up.color)
        + dot(&out.alpha, &up.alpha)
        + dot(&out.flow_raw, &up.flow_raw)
        + dot(&out.flow, &up.flow)
        + dot(&out.depth_raw, &up.depth_raw)
        + dot(&out.depth, &up.depth)
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let splats = random_scene(1, 5, 8.0, true);
    let cfg = RasterConfig::default();
    let g = render_backward(&splats, 8, 8, &cfg, &RenderGrad::zeros(64));
    assert!(g.iter().all(|s| *s == SplatGrad::default()));
    let g = render_backward(&splats, 8, 8, &cfg, &RenderGrad::default());
    assert!(g.iter().all(|s| *s == SplatGrad::default()));
}

/// Scalar views of every differentiable splat input.
fn get(s: &Splat, k: usize) -> f64 {
    let f = s.flow.unwrap();
    match k {
        0 | 1 => s.mean[k],
        2 => s.cov[(0, 0)],
        3 => s.cov[(0, 1)],
        4 => s.cov[(1, 1)],
        5 => s.opacity,
        6..=8 => s.color[k - 6],
        9 => s.depth,
        10 | 11 => f.mean[k - 10],
        12 => f.cov[(0, 0)],
        13 => f.cov[(0, 1)],
        14 => f.cov[(1, 1)],
        _ => unreachable!(),
    }
}

fn set(s: &Splat, k: usize, v: f64) -> Splat {
    let mut mean = s.mean;
    let mut cov = s.cov;
    let mut opacity = s.opacity;
    let mut color = s.color;
    let mut depth = s.depth;
    let mut f = s.flow.unwrap();
    match k {
        0 | 1 => mean[k] = v,
        2 => cov[(0, 0)] = v,
        3 => {
            cov[(0, 1)] = v;
            cov[(1, 0)] = v
        }
        4 => cov[(1, 1)] = v,
        5 => opacity = v,
        6..=8 => color[k - 6] = v,
        9 => depth = v,
        10 | 11 => f.mean[k - 10] = v,
        12 => f.cov[(0, 0)] = v,
        13 => {
            f.cov[(0, 1)] = v;
            f.cov[(1, 0)] = v
        }
        14 => f.cov[(1, 1)] = v,
        _ => unreachable!(),
    }
    Splat::new(s.id, mean, cov, depth, opacity, color, Some(f)).unwrap()
}

fn analytic(g: &SplatGrad, k: usize) -> f64 {
    match k {
        0 | 1 => g.mean[k],
        2 => g.cov[(0, 0)],
        3 => g.cov[(0, 1)] + g.cov[(1, 0)],
        4 => g.cov[(1, 1)],
        5 => g.opacity,
        6..=8 => g.color[k - 6],
        9 => g.depth,
        10 | 11 => g.flow_mean[k - 10],
        12 => g.flow_cov[(0, 0)],
        13 => g.flow_cov[(0, 1)] + g.flow_cov[(1, 0)],
        14 => g.flow_cov[(1, 1)],
        _ => unreachable!(),
    }
}

#[test]
fn backward_matches_finite_differences() {
    let cfg = RasterConfig::default();
    let splats = vec![
        Splat::new(0, Vector2::new(3.2, 3.6), Matrix2::new(3.0, 0.8, 0.8, 2.0), 2.0, 0.7, Vector3::new(0.9, 0.2, 0.1),
            Some(FlowTarget { mean: Vector2::new(4.1, 3.0), cov: Matrix2::new(3.5, 0.5, 0.5, 2.2) })).unwrap(),
        Splat::new(1, Vector2::new(4.7, 4.1), Matrix2::new(2.0, -0.4, -0.4, 3.0), 3.0, 0.6, Vector3::new(0.1, 0.8, 0.3),
            Some(FlowTarget { mean: Vector2::new(4.0, 5.2), cov: Matrix2::new(2.4, -0.2, -0.2, 2.6) })).unwrap(),
        Splat::new(2, Vector2::new(2.4, 5.3), Matrix2::new(4.0, 0.3, 0.3, 3.5), 4.5, 0.8, Vector3::new(0.3, 0.3, 0.9),
            Some(FlowTarget { mean: Vector2::new(2.4, 5.3), cov: Matrix2::new(4.2, 0.1, 0.1, 3.0) })).unwrap(),
    ];
    let up = random_upstream(4, 64);
    let grads = render_backward(&splats, 8, 8, &cfg, &up);
    let h = 1e-6;
    for i in 0..splats.len() {
        for k in 0..15 {
            let x = get(&splats[i], k);
            let mut a = splats.clone();
            a[i] = set(&splats[i], k, x + h);
            let mut b = splats.clone();
            b[i] = set(&splats[i], k, x - h);
            let fd = (objective(&render(&a, 8, 8, &cfg), &up) - objective(&render(&b, 8, 8, &cfg), &up)) / (2.0 * h);
            let an = analytic(&grads[i], k);
            assert!(
                (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-2),
                "splat {i} param {k}: fd {fd} analytic {an}"
            );
        }
    }
}

#[test]
fn fully_occluded_splat_gets_no_gradient() {
    let cfg = RasterConfig::default();
    let front = [
        splat(0, (4.0, 4.0), (400.0, 0.0, 400.0), 1.0, 1.0, (1.0, 0.0, 0.0)),
        splat(1, (4.0, 4.0), (400.0, 0.0, 400.0), 1.5, 1.0, (0.0, 1.0, 0.0)),
        splat(3, (4.0, 4.0), (400.0, 0.0, 400.0), 1.7, 1.0, (0.0, 1.0, 1.0)),
    ];
    let hidden = splat(2, (4.0, 4.0), (1.0, 0.0, 1.0), 5.0, 0.9, (0.0, 0.0, 1.0));
    let mut splats = front.to_vec();
    splats.push(hidden);
    let up = random_upstream(2, 64);
    let g = render_backward(&splats, 8, 8, &cfg, &up);
    assert_eq!(g[3], SplatGrad::default());
    assert_ne!(g[0], SplatGrad::default());
}
