//! Front-to-back alpha compositing of projected Gaussians into color, optical
//! flow, depth and accumulated-weight maps, with a reverse pass.

mod backward;
mod forward;
mod output;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

pub use backward::{render_backward, RenderGrad, SplatGrad};
pub use forward::{render, render_reference};
pub use output::RenderOutput;

use crate::error::Result;
use crate::scene::{project_gaussian, project_mean_cov, Camera, Gaussian, ProjectionConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    /// Upper clamp of a single splat's opacity contribution.
    pub alpha_max: f64,
    /// Contributions below this are skipped.
    pub alpha_min: f64,
    /// Compositing stops once transmittance would fall below this.
    pub transmittance_min: f64,
    /// Flow and depth are normalized only where the accumulated weight exceeds this.
    pub normalize_eps: f64,
    pub tile_size: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            alpha_max: 0.999,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            normalize_eps: 1e-6,
            tile_size: 16,
        }
    }
}

/// Footprint of the same Gaussian at the flow target time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowTarget {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// A projected Gaussian ready for compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    /// Stable identifier used to break depth ties.
    pub id: usize,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Inverse of `cov`.
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub depth: f64,
    pub flow: Option<FlowTarget>,
}

impl Splat {
    /// `None` when the covariance is not positive definite or a value is non-finite.
    pub fn new(
        id: usize,
        mean: Vector2<f64>,
        cov: Matrix2<f64>,
        depth: f64,
        opacity: f64,
        color: Vector3<f64>,
        flow: Option<FlowTarget>,
    ) -> Option<Self> {
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        if !(det > 0.0 && cov[(0, 0)] > 0.0) || !mean.iter().all(|v| v.is_finite()) {
            return None;
        }
        let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
        Some(Self {
            id,
            mean,
            cov,
            conic,
            opacity,
            color,
            depth,
            flow,
        })
    }

    /// Flow contribution at pixel `x`: `Σ' Q (x − μ) + μ' − x`, evaluated as
    /// `(Σ' − Σ) Q (x − μ) + (μ' − μ)` so that an unchanged footprint gives exactly zero.
    pub fn flow_at(&self, x: &Vector2<f64>) -> Vector2<f64> {
        match &self.flow {
            Some(target) => (target.cov - self.cov) * (self.conic * (x - self.mean)) + (target.mean - self.mean),
            None => Vector2::zeros(),
        }
    }

    /// Half extents of the box outside which `α` is below `alpha_min`,
    /// padded by a pixel. `None` if the splat can never contribute.
    pub(crate) fn extent(&self, alpha_min: f64) -> Option<(f64, f64)> {
        let ratio = self.opacity.min(1.0) / alpha_min;
        if !(ratio >= 1.0) {
            return None;
        }
        let r2 = 2.0 * ratio.ln();
        Some(((self.cov[(0, 0)] * r2).sqrt() + 1.0, (self.cov[(1, 1)] * r2).sqrt() + 1.0))
    }
}

/// Front-to-back order: ascending depth, ties broken by splat id.
pub fn sort_by_depth(splats: &[Splat]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].id.cmp(&splats[b].id))
    });
    order
}

/// World-space end state used for flow rendering: position and 3D covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowEnd {
    pub position: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Projects Gaussians into `cam`. Culled or degenerate Gaussians are dropped;
/// each splat's id is its index in `gaussians`. When `flow_ends` is given,
/// each splat carries its end-state footprint (none if that end is culled).
pub fn splat_gaussians(
    gaussians: &[Gaussian],
    flow_ends: Option<&[FlowEnd]>,
    cam: &Camera,
    cfg: &ProjectionConfig,
) -> Result<Vec<Splat>> {
    let mut out = Vec::with_capacity(gaussians.len());
    for (i, g) in gaussians.iter().enumerate() {
        let Some(p) = project_gaussian(g, cam, cfg)? else {
            continue;
        };
        let flow = flow_ends.and_then(|ends| {
            project_mean_cov(&ends[i].position, &ends[i].cov, cam, cfg).map(|q| FlowTarget {
                mean: q.mean,
                cov: q.cov,
            })
        });
        if let Some(s) = Splat::new(i, p.mean, p.cov, p.depth, g.opacity(), g.color, flow) {
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
