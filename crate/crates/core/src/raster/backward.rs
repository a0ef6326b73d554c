use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use super::forward::{pixel_center, shade, Contribution, TileBins};
use super::{RasterConfig, Splat};

/// Upstream gradients on the maps of a [`super::RenderOutput`]. Empty vectors mean zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderGrad {
    pub color: Vec<f64>,
    pub alpha: Vec<f64>,
    pub flow_raw: Vec<f64>,
    pub flow: Vec<f64>,
    pub depth_raw: Vec<f64>,
    pub depth: Vec<f64>,
}

impl RenderGrad {
    pub fn zeros(pixels: usize) -> Self {
        Self {
            color: vec![0.0; 3 * pixels],
            alpha: vec![0.0; pixels],
            flow_raw: vec![0.0; 2 * pixels],
            flow: vec![0.0; 2 * pixels],
            depth_raw: vec![0.0; pixels],
            depth: vec![0.0; pixels],
        }
    }
}

/// Gradient with respect to one splat's inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub depth: f64,
    pub flow_mean: Vector2<f64>,
    pub flow_cov: Matrix2<f64>,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean += o.mean;
        self.cov += o.cov;
        self.opacity += o.opacity;
        self.color += o.color;
        self.depth += o.depth;
        self.flow_mean += o.flow_mean;
        self.flow_cov += o.flow_cov;
    }
}

fn vec2(v: &[f64], i: usize) -> Vector2<f64> {
    if v.is_empty() {
        Vector2::zeros()
    } else {
        Vector2::new(v[2 * i], v[2 * i + 1])
    }
}

fn vec3(v: &[f64], i: usize) -> Vector3<f64> {
    if v.is_empty() {
        Vector3::zeros()
    } else {
        Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])
    }
}

fn scalar(v: &[f64], i: usize) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v[i]
    }
}

/// Per-splat accumulator; the conic gradient is converted to a covariance gradient at the end.
#[derive(Clone, Copy, Default)]
struct Acc {
    grad: SplatGrad,
    conic: Matrix2<f64>,
}

fn pixel_backward(
    splats: &[Splat],
    contribs: &[Contribution],
    up: &RenderGrad,
    index: usize,
    cfg: &RasterConfig,
    accs: &mut [Acc],
    weight_grad: &mut Vec<f64>,
) {
    let g_color = vec3(&up.color, index);
    let g_alpha = scalar(&up.alpha, index);
    let g_flow_raw = vec2(&up.flow_raw, index);
    let g_flow = vec2(&up.flow, index);
    let g_depth_raw = scalar(&up.depth_raw, index);
    let g_depth = scalar(&up.depth, index);

    let mut a = 0.0;
    let mut f = Vector2::zeros();
    let mut d = 0.0;
    for c in contribs {
        let w = c.alpha * c.transmittance;
        a += w;
        f += c.flow * w;
        d += splats[c.splat].depth * w;
    }
    let normalized = a > cfg.normalize_eps;
    let (f_norm, d_norm, inv_a) = if normalized {
        (f / a, d / a, 1.0 / a)
    } else {
        (Vector2::zeros(), 0.0, 0.0)
    };

    weight_grad.clear();
    for c in contribs {
        let s = &splats[c.splat];
        let w = c.alpha * c.transmittance;
        let mut gw = g_color.dot(&s.color) + g_alpha + g_depth_raw * s.depth + g_flow_raw.dot(&c.flow);
        if normalized {
            gw += g_depth * (s.depth - d_norm) * inv_a + g_flow.dot(&(c.flow - f_norm)) * inv_a;
        }
        weight_grad.push(gw);
        let acc = &mut accs[c.splat];
        let out = &mut acc.grad;
        out.color += g_color * w;
        out.depth += w * (g_depth_raw + g_depth * inv_a);

        let f_bar = (g_flow_raw + g_flow * inv_a) * w;
        if let Some(target) = &s.flow {
            // f = (Σ' − Σ) Q d + μ' − μ
            let qd = s.conic * c.offset;
            let m_bar = f_bar * qd.transpose();
            out.flow_mean += f_bar;
            out.mean -= f_bar;
            out.flow_cov += m_bar;
            out.cov -= m_bar;
            let qd_bar = (target.cov - s.cov).transpose() * f_bar;
            acc.conic += qd_bar * c.offset.transpose();
            out.mean -= s.conic.transpose() * qd_bar;
        }
    }

    let mut suffix = 0.0;
    for (k, c) in contribs.iter().enumerate().rev() {
        let w = c.alpha * c.transmittance;
        let alpha_bar = weight_grad[k] * c.transmittance - suffix / (1.0 - c.alpha);
        suffix += weight_grad[k] * w;
        if c.clamped {
            continue;
        }
        let s = &splats[c.splat];
        let acc = &mut accs[c.splat];
        acc.grad.opacity += alpha_bar * c.alpha / s.opacity;
        let power_bar = alpha_bar * c.alpha;
        let sym = (s.conic + s.conic.transpose()) * 0.5;
        // power = −½ dᵀQd, d = x − μ
        acc.grad.mean += sym * c.offset * power_bar;
        acc.conic += c.offset * c.offset.transpose() * (-0.5 * power_bar);
    }
}

/// Reverse pass of [`super::render`]: gradients per splat, in input order.
///
/// Rows are processed independently and merged in row order, so the result
/// does not depend on the thread count.
pub fn render_backward(
    splats: &[Splat],
    width: usize,
    height: usize,
    cfg: &RasterConfig,
    upstream: &RenderGrad,
) -> Vec<SplatGrad> {
    let n = splats.len();
    let bins = TileBins::build(splats, width, height, cfg);
    let rows: Vec<Vec<Acc>> = (0..height)
        .into_par_iter()
        .map(|row| {
            let mut acc = vec![Acc::default(); n];
            let mut contribs = Vec::new();
            let mut weight_grad = Vec::new();
            for col in 0..width {
                let index = row * width + col;
                contribs.clear();
                shade(splats, bins.at(col, row).iter().copied(), &pixel_center(col, row), cfg, Some(&mut contribs));
                if !contribs.is_empty() {
                    pixel_backward(splats, &contribs, upstream, index, cfg, &mut acc, &mut weight_grad);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Acc::default(); n];
    for row in &rows {
        for (t, r) in total.iter_mut().zip(row) {
            t.grad.add(&r.grad);
            t.conic += r.conic;
        }
    }
    total
        .iter()
        .zip(splats)
        .map(|(t, s)| {
            let mut g = t.grad;
            // Q = Σ⁻¹ ⇒ Σ̄ = −Qᵀ Q̄ Qᵀ
            g.cov -= s.conic.transpose() * t.conic * s.conic.transpose();
            g
        })
        .collect()
}
