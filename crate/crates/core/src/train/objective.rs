//! One training sample's loss and its gradient with respect to every
//! canonical Gaussian parameter and every warp weight.

use nalgebra::{Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{
    depth_ranking_loss, flow_loss, motion_mask, photometric_dssim_loss, random_pixel_mask, sample_pairs,
    LossWeights, RankingConfig,
};
use crate::raster::{render, render_backward, splat_gaussians, FlowEnd, RasterConfig, RenderGrad, SplatGrad};
use crate::scene::{
    compose_covariance, compose_covariance_vjp, normalize_quaternion_vjp, project_gaussian_vjp, project_mean_cov_vjp,
    Camera, Gaussian, Projected2DGrad, ProjectionConfig,
};
use crate::synthetic::SyntheticDataset;
use crate::velocity::{integrate_vjp, integrate_with_tape, IntegrationTape, IntegratorConfig, MotionState};
use crate::warp::{apply_offsets, warp_input, Tangents, WarpField, WarpTape};

/// Gradient with respect to one Gaussian's stored parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl GaussianGrad {
    fn add(&mut self, o: &GaussianGrad) {
        self.position += o.position;
        self.rotation += o.rotation;
        self.log_scale += o.log_scale;
        self.opacity_logit += o.opacity_logit;
        self.color += o.color;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrad {
    pub gaussians: Vec<GaussianGrad>,
    pub field: Vec<f64>,
}

/// Loss terms of one sample. `flow` and `depth` are summed over the active neighbors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub photometric: f64,
    pub flow: f64,
    pub depth: f64,
    pub total: f64,
}

/// Pixels the flow loss is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowMask {
    All,
    Random { fraction: f64, seed: u64 },
    Motion { tau: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub ranking: RankingConfig,
    pub dssim: f64,
    pub integrator: IntegratorConfig,
    /// Evaluate the scene-flow terms (both weights must still be nonzero to contribute).
    pub scene_flow: bool,
    pub mask: FlowMask,
    /// Seed of the depth-ranking pairs.
    pub pair_seed: u64,
    pub projection: ProjectionConfig,
    pub raster: RasterConfig,
}

/// Which `(camera, timestamp)` a step trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub camera: usize,
    pub frame: usize,
    /// Cameras whose reference depth supervises the next and the previous neighbor.
    pub neighbor_cameras: [usize; 2],
}

impl Sample {
    /// Every term seen through one camera.
    pub fn new(camera: usize, frame: usize) -> Self {
        Self {
            camera,
            frame,
            neighbor_cameras: [camera; 2],
        }
    }
}

fn splat_grad_to_gaussian(g: &Gaussian, sg: &SplatGrad, cam: &Camera) -> Result<GaussianGrad> {
    let geo = project_gaussian_vjp(
        g,
        cam,
        &Projected2DGrad {
            mean: sg.mean,
            cov: sg.cov,
            depth: sg.depth,
        },
    )?;
    let o = g.opacity();
    Ok(GaussianGrad {
        position: geo.position,
        rotation: geo.rotation,
        log_scale: geo.log_scale,
        opacity_logit: sg.opacity * o * (1.0 - o),
        color: sg.color,
    })
}

/// One neighbor `t ± Δt`: integrated end states and their tapes.
struct Neighbor {
    frame: usize,
    camera: usize,
    dt: f64,
    ends: Vec<MotionState>,
    tapes: Vec<IntegrationTape>,
    /// Gradient on each end state (position, normalized rotation).
    end_grad: Vec<MotionState>,
}

/// Deformed Gaussians at time `t` with the tapes needed to pull gradients back to canonical space.
pub(crate) struct Deformed {
    pub gaussians: Vec<Gaussian>,
    tapes: Vec<WarpTape>,
}

pub(crate) fn deform_all(field: &WarpField, canonical: &[Gaussian], t: f64) -> Deformed {
    let (gaussians, tapes) = canonical
        .par_iter()
        .map(|g| {
            let tape = field.record(&warp_input(g, t), Tangents::None);
            (apply_offsets(g, &tape.output()), tape)
        })
        .unzip();
    Deformed { gaussians, tapes }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} loss is {v}")))
    }
}

/// Loss and gradient of one sample.
pub fn objective(
    field: &WarpField,
    canonical: &[Gaussian],
    data: &SyntheticDataset,
    sample: Sample,
    cfg: &ObjectiveConfig,
) -> Result<(LossTerms, ModelGrad)> {
    let n = canonical.len();
    let cam = &data.scene.cameras[sample.camera];
    let (w, h) = (cam.width, cam.height);
    let pixels = w * h;
    let j = sample.frame;
    let t = data.times[j];
    let frame = data.frame(sample.camera, j);

    let deformed = deform_all(field, canonical, t);
    let gt = &deformed.gaussians;
    let mut dgrad = vec![GaussianGrad::default(); n];
    let mut field_grad = vec![0.0; field.param_count()];
    let mut terms = LossTerms::default();

    let use_flow = cfg.scene_flow && cfg.weights.alpha > 0.0;
    let use_depth = cfg.scene_flow && cfg.weights.beta > 0.0;
    let mut neighbors = Vec::new();
    if use_flow || use_depth {
        for (nb, camera) in [j + 1, j.wrapping_sub(1)].into_iter().zip(sample.neighbor_cameras) {
            if nb >= data.times.len() {
                continue;
            }
            let dt = data.times[nb] - t;
            let integrated = (0..n)
                .into_par_iter()
                .map(|i| integrate_with_tape(field, &canonical[i], &MotionState::of(&gt[i]), t, dt, &cfg.integrator))
                .collect::<Result<Vec<_>>>()?;
            let (ends, tapes) = integrated.into_iter().unzip();
            neighbors.push(Neighbor {
                frame: nb,
                camera,
                dt,
                ends,
                tapes,
                end_grad: vec![MotionState::default(); n],
            });
        }
    }

    // Pass A: color, plus flow towards each neighbor. The first render carries the photometric term.
    let renders = if use_flow { neighbors.len().max(1) } else { 1 };
    for r in 0..renders {
        let nb = if use_flow { neighbors.get(r) } else { None };
        let flow_ends = match nb {
            Some(nb) => Some(
                (0..n)
                    .map(|i| {
                        Ok(FlowEnd {
                            position: nb.ends[i].position,
                            cov: compose_covariance(&nb.ends[i].rotation, &gt[i].log_scale)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        let splats = splat_gaussians(gt, flow_ends.as_deref(), cam, &cfg.projection)?;
        let out = render(&splats, w, h, &cfg.raster);
        let mut up = RenderGrad::default();
        if r == 0 {
            let photo = photometric_dssim_loss(&out.color, &frame.image, w, h, cfg.dssim)?;
            check_finite("photometric", photo.value)?;
            terms.photometric = photo.value;
            up.color = photo.grad;
        }
        if let Some(nb) = nb {
            let reference = if nb.dt > 0.0 { &frame.flow } else { &frame.backward_flow };
            let mask = match cfg.mask {
                FlowMask::All => None,
                FlowMask::Random { fraction, seed } => Some(random_pixel_mask(pixels, fraction, seed ^ r as u64)),
                FlowMask::Motion { tau } => Some(motion_mask(reference, w, h, tau)),
            };
            let fl = flow_loss(&out.flow, reference, mask.as_deref())?;
            check_finite("flow", fl.value)?;
            terms.flow += fl.value;
            up.flow = fl.grad.iter().map(|g| g * cfg.weights.alpha).collect();
        }
        let grads = render_backward(&splats, w, h, &cfg.raster, &up);
        let mut end_grads = Vec::new();
        for (s, sg) in splats.iter().zip(&grads) {
            let i = s.id;
            dgrad[i].add(&splat_grad_to_gaussian(&gt[i], sg, cam)?);
            if let (Some(nb), Some(_)) = (nb, &s.flow) {
                let end = &nb.ends[i];
                let end_cov = compose_covariance(&end.rotation, &gt[i].log_scale)?;
                let (p_grad, cov_grad) = project_mean_cov_vjp(
                    &end.position,
                    &end_cov,
                    cam,
                    &Projected2DGrad {
                        mean: sg.flow_mean,
                        cov: sg.flow_cov,
                        depth: 0.0,
                    },
                );
                let (q_grad, s_grad) = compose_covariance_vjp(&end.rotation, &gt[i].log_scale, &cov_grad)?;
                end_grads.push((i, p_grad, q_grad));
                dgrad[i].log_scale += s_grad;
            }
        }
        for (i, p_grad, q_grad) in end_grads {
            let eg = &mut neighbors[r].end_grad[i];
            eg.position += p_grad;
            eg.rotation += q_grad;
        }
    }

    // Pass B: depth ranking of the integrated state against the neighbor's reference depth.
    if use_depth {
        for (k, nb) in neighbors.iter_mut().enumerate() {
            let moved: Vec<Gaussian> = (0..n)
                .map(|i| Gaussian {
                    position: nb.ends[i].position,
                    rotation: nb.ends[i].rotation,
                    ..gt[i].clone()
                })
                .collect();
            let ncam = &data.scene.cameras[nb.camera];
            if (ncam.width, ncam.height) != (w, h) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{w}x{h} neighbor camera"),
                    actual: format!("{}x{}", ncam.width, ncam.height),
                });
            }
            let splats = splat_gaussians(&moved, None, ncam, &cfg.projection)?;
            let out = render(&splats, w, h, &cfg.raster);
            let reference = &data.frame(nb.camera, nb.frame).depth;
            let pairs = sample_pairs(w, h, &cfg.ranking, cfg.pair_seed.wrapping_add(k as u64));
            let dl = depth_ranking_loss(&out.depth, reference, &pairs, cfg.weights.margin, cfg.ranking.dead_band, None)?;
            check_finite("depth", dl.value)?;
            terms.depth += dl.value;
            let up = RenderGrad {
                depth: dl.grad.iter().map(|g| g * cfg.weights.beta).collect(),
                ..Default::default()
            };
            let grads = render_backward(&splats, w, h, &cfg.raster, &up);
            for (s, sg) in splats.iter().zip(&grads) {
                let i = s.id;
                let g = splat_grad_to_gaussian(&moved[i], sg, ncam)?;
                nb.end_grad[i].position += g.position;
                nb.end_grad[i].rotation += g.rotation;
                dgrad[i].log_scale += g.log_scale;
                dgrad[i].opacity_logit += g.opacity_logit;
                dgrad[i].color += g.color;
            }
        }
    }

    let mut canon_grad = vec![GaussianGrad::default(); n];
    // Through the integrator: end state → start state (deformed) and canonical network input.
    for nb in &neighbors {
        let parts: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = vec![0.0; field.param_count()];
                let ig = integrate_vjp(field, &nb.tapes[i], &nb.end_grad[i], &mut g);
                (ig, g)
            })
            .collect();
        for (i, (ig, g)) in parts.into_iter().enumerate() {
            dgrad[i].position += ig.start.position;
            dgrad[i].rotation += ig.start.rotation;
            canon_grad[i].position += ig.canonical_position;
            canon_grad[i].rotation += ig.canonical_rotation;
            add_into(&mut field_grad, &g);
        }
    }

    // Through the deformation `(p + δp, normalize(q + δq), s + δs)`.
    let parts: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = &dgrad[i];
            let tape = &deformed.tapes[i];
            let raw_q = canonical[i].rotation + tape.output().rotation;
            let q_grad = normalize_quaternion_vjp(&raw_q, &d.rotation);
            let mut out = [0.0; crate::warp::OUTPUTS];
            out[..3].copy_from_slice(d.position.as_slice());
            out[3..7].copy_from_slice(q_grad.as_slice());
            out[7..].copy_from_slice(d.log_scale.as_slice());
            let mut g = vec![0.0; field.param_count()];
            let ig = field.backward(tape, &out, &[], &mut g);
            let cg = GaussianGrad {
                position: d.position + ig.position,
                rotation: q_grad + ig.rotation,
                log_scale: d.log_scale,
                opacity_logit: d.opacity_logit,
                color: d.color,
            };
            (cg, g)
        })
        .collect();
    for (i, (cg, g)) in parts.into_iter().enumerate() {
        canon_grad[i].add(&cg);
        add_into(&mut field_grad, &g);
    }

    terms.total = terms.photometric + cfg.weights.alpha * terms.flow + cfg.weights.beta * terms.depth;
    Ok((
        terms,
        ModelGrad {
            gaussians: canon_grad,
            field: field_grad,
        },
    ))
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}
