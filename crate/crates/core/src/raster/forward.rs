use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::{sort_by_depth, RasterConfig, RenderOutput, Splat};

/// One splat's contribution at one pixel, kept for the reverse pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    pub splat: usize,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    /// `α` hit the upper clamp.
    pub clamped: bool,
    /// `x − μ`.
    pub offset: Vector2<f64>,
    pub flow: Vector2<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Pixel {
    pub color: Vector3<f64>,
    pub alpha: f64,
    pub flow: Vector2<f64>,
    pub depth: f64,
}

/// Composites `candidates` (indices into `splats`, front to back) at pixel center `x`.
pub(crate) fn shade(
    splats: &[Splat],
    candidates: impl IntoIterator<Item = usize>,
    x: &Vector2<f64>,
    cfg: &RasterConfig,
    mut record: Option<&mut Vec<Contribution>>,
) -> Pixel {
    let mut px = Pixel::default();
    let mut t = 1.0;
    for i in candidates {
        let s = &splats[i];
        let d = x - s.mean;
        let power = -0.5 * d.dot(&(s.conic * d));
        if power > 0.0 {
            continue;
        }
        let raw = s.opacity * power.exp();
        let clamped = raw > cfg.alpha_max;
        let alpha = if clamped { cfg.alpha_max } else { raw };
        if alpha < cfg.alpha_min {
            continue;
        }
        let next = t * (1.0 - alpha);
        if next < cfg.transmittance_min {
            break;
        }
        let w = alpha * t;
        let flow = s.flow_at(x);
        px.color += s.color * w;
        px.alpha += w;
        px.flow += flow * w;
        px.depth += s.depth * w;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                splat: i,
                alpha,
                transmittance: t,
                clamped,
                offset: d,
                flow,
            });
        }
        t = next;
    }
    px
}

fn store(out: &mut RenderOutput, index: usize, px: &Pixel, cfg: &RasterConfig) {
    out.color[3 * index..3 * index + 3].copy_from_slice(px.color.as_slice());
    out.alpha[index] = px.alpha;
    out.flow_raw[2 * index..2 * index + 2].copy_from_slice(px.flow.as_slice());
    out.depth_raw[index] = px.depth;
    if px.alpha > cfg.normalize_eps {
        let f = px.flow / px.alpha;
        out.flow[2 * index..2 * index + 2].copy_from_slice(f.as_slice());
        out.depth[index] = px.depth / px.alpha;
    }
}

pub(crate) fn pixel_center(col: usize, row: usize) -> Vector2<f64> {
    Vector2::new(col as f64, row as f64)
}

/// Per-pixel evaluation over every splat, with no tiling or culling.
pub fn render_reference(splats: &[Splat], width: usize, height: usize, cfg: &RasterConfig) -> RenderOutput {
    let order = sort_by_depth(splats);
    let mut out = RenderOutput::zeros(width, height);
    for row in 0..height {
        for col in 0..width {
            let px = shade(splats, order.iter().copied(), &pixel_center(col, row), cfg, None);
            store(&mut out, row * width + col, &px, cfg);
        }
    }
    out
}

/// Splat indices (front to back) per tile, row-major over tiles.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub tile: usize,
    pub bins: Vec<Vec<usize>>,
}

impl TileBins {
    pub fn build(splats: &[Splat], width: usize, height: usize, cfg: &RasterConfig) -> Self {
        let tile = cfg.tile_size.max(1);
        let tiles_x = width.div_ceil(tile);
        let tiles_y = height.div_ceil(tile);
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        for i in sort_by_depth(splats) {
            let s = &splats[i];
            let Some((ex, ey)) = s.extent(cfg.alpha_min) else {
                continue;
            };
            let Some((c0, c1)) = pixel_span(s.mean.x, ex, width) else {
                continue;
            };
            let Some((r0, r1)) = pixel_span(s.mean.y, ey, height) else {
                continue;
            };
            for ty in r0 / tile..=r1 / tile {
                for tx in c0 / tile..=c1 / tile {
                    bins[ty * tiles_x + tx].push(i);
                }
            }
        }
        Self { tiles_x, tile, bins }
    }

    pub fn at(&self, col: usize, row: usize) -> &[usize] {
        &self.bins[(row / self.tile) * self.tiles_x + col / self.tile]
    }
}

/// Inclusive pixel range covered by `[center − half, center + half]`, clipped to the image.
fn pixel_span(center: f64, half: f64, len: usize) -> Option<(usize, usize)> {
    let lo = (center - half).ceil().max(0.0);
    let hi = (center + half).floor().min(len as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Tiled, row-parallel renderer. Output is bit-identical to [`render_reference`].
pub fn render(splats: &[Splat], width: usize, height: usize, cfg: &RasterConfig) -> RenderOutput {
    let bins = TileBins::build(splats, width, height, cfg);
    let rows: Vec<Vec<Pixel>> = (0..height)
        .into_par_iter()
        .map(|row| {
            (0..width)
                .map(|col| shade(splats, bins.at(col, row).iter().copied(), &pixel_center(col, row), cfg, None))
                .collect()
        })
        .collect();
    let mut out = RenderOutput::zeros(width, height);
    for (row, pixels) in rows.iter().enumerate() {
        for (col, px) in pixels.iter().enumerate() {
            store(&mut out, row * width + col, px, cfg);
        }
    }
    out
}
