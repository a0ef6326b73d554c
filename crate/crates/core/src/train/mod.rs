//! Optimization of canonical Gaussians and the warp field: warm-up, scene-flow
//! regularization, masking schedule, checkpoints, evaluation and trajectory analysis.

mod adam;
mod config;
mod metrics;
mod objective;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{Adam, ExpDecay};
pub use config::{GaussianLr, InitNoise, TrainConfig, ViewSchedule};
pub use metrics::{psnr, Metrics, ViewMetrics, PSNR_CAP};
pub use objective::{objective, FlowMask, GaussianGrad, LossTerms, ModelGrad, ObjectiveConfig, Sample};

use crate::error::{Error, Result};
use crate::io::json;
use crate::losses::{LossLog, LossRecord};
use crate::raster::{render, splat_gaussians, FlowEnd, RasterConfig, RenderOutput};
use crate::scene::file::SceneFile;
use crate::scene::{Camera, Gaussian, ProjectionConfig};
use crate::synthetic::SyntheticDataset;
use crate::velocity::{integrated_trajectory, scene_flow, IntegratorConfig, TrajectorySample};
use crate::warp::{checkpoint, WarpField};

pub const WARP_FILE: &str = "warp.bin";
pub const SCENE_FILE: &str = "scene.json";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Canonical Gaussians together with the warp field.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub gaussians: Vec<Gaussian>,
    pub field: WarpField,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl Model {
    /// The dataset's canonical Gaussians, perturbed per `cfg.init_noise`, and an identity warp.
    pub fn init(data: &SyntheticDataset, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = cfg.init_noise;
        let gaussians = data
            .scene
            .canonical
            .iter()
            .map(|g| {
                let mut g = g.clone();
                for k in 0..3 {
                    g.position[k] += noise.position * normal(&mut rng);
                    g.log_scale[k] += noise.log_scale * normal(&mut rng);
                    g.color[k] = (g.color[k] + noise.color * normal(&mut rng)).clamp(0.0, 1.0);
                }
                g
            })
            .collect();
        Self {
            gaussians,
            field: WarpField::new(cfg.warp.clone(), cfg.seed.wrapping_add(1)),
        }
    }

    /// Gaussians deformed to time `t`.
    pub fn deformed(&self, t: f64) -> Vec<Gaussian> {
        objective::deform_all(&self.field, &self.gaussians, t).gaussians
    }

    pub fn render(&self, cam: &Camera, t: f64) -> Result<RenderOutput> {
        let splats = splat_gaussians(&self.deformed(t), None, cam, &ProjectionConfig::default())?;
        Ok(render(&splats, cam.width, cam.height, &RasterConfig::default()))
    }

    /// Renders the state at `t` with the flow of each Gaussian integrated over `[t, t + dt]`.
    pub fn render_flow(&self, cam: &Camera, t: f64, dt: f64, cfg: &IntegratorConfig) -> Result<RenderOutput> {
        let flows = self
            .gaussians
            .par_iter()
            .map(|g| scene_flow(&self.field, g, t, dt, cfg))
            .collect::<Result<Vec<_>>>()?;
        let start: Vec<Gaussian> = flows.iter().map(|f| f.start.clone()).collect();
        let ends: Vec<FlowEnd> = flows
            .iter()
            .map(|f| FlowEnd {
                position: f.end.position,
                cov: f.end_covariance,
            })
            .collect();
        let splats = splat_gaussians(&start, Some(&ends), cam, &ProjectionConfig::default())?;
        Ok(render(&splats, cam.width, cam.height, &RasterConfig::default()))
    }
}

/// Optimizer state across iterations.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub iteration: usize,
    rng: ChaCha8Rng,
    train_cameras: Vec<usize>,
    opt: [Adam; 6],
}

fn pack(gs: &[Gaussian]) -> [Vec<f64>; 5] {
    let mut out: [Vec<f64>; 5] = Default::default();
    for g in gs {
        out[0].extend(g.position.iter());
        out[1].extend(g.rotation.iter());
        out[2].extend(g.log_scale.iter());
        out[3].push(g.opacity_logit);
        out[4].extend(g.color.iter());
    }
    out
}

fn pack_grad(gs: &[GaussianGrad]) -> [Vec<f64>; 5] {
    let mut out: [Vec<f64>; 5] = Default::default();
    for g in gs {
        out[0].extend(g.position.iter());
        out[1].extend(g.rotation.iter());
        out[2].extend(g.log_scale.iter());
        out[3].push(g.opacity_logit);
        out[4].extend(g.color.iter());
    }
    out
}

fn unpack(gs: &mut [Gaussian], p: &[Vec<f64>; 5]) {
    for (i, g) in gs.iter_mut().enumerate() {
        for k in 0..3 {
            g.position[k] = p[0][3 * i + k];
            g.log_scale[k] = p[2][3 * i + k];
            g.color[k] = p[4][3 * i + k];
        }
        for k in 0..4 {
            g.rotation[k] = p[1][4 * i + k];
        }
        g.opacity_logit = p[3][i];
    }
}

impl Trainer {
    pub fn new(data: &SyntheticDataset, cfg: TrainConfig) -> Result<Self> {
        let model = Model::init(data, &cfg);
        Self::from_model(data, cfg, model)
    }

    pub fn from_model(data: &SyntheticDataset, cfg: TrainConfig, model: Model) -> Result<Self> {
        cfg.validate()?;
        if model.gaussians.is_empty() {
            return Err(Error::Config("model has no Gaussians".into()));
        }
        let train_cameras: Vec<usize> =
            (0..data.scene.cameras.len()).filter(|c| !cfg.holdout_cameras.contains(c)).collect();
        if train_cameras.is_empty() {
            return Err(Error::Config("every camera is held out".into()));
        }
        let n = model.gaussians.len();
        let mk = |len| Adam::new(len, cfg.betas, cfg.adam_eps);
        let opt = [mk(3 * n), mk(4 * n), mk(3 * n), mk(n), mk(3 * n), mk(model.field.param_count())];
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
            cfg,
            model,
            iteration: 0,
            train_cameras,
            opt,
        })
    }

    /// Objective settings for the current iteration and a fresh sample.
    fn plan(&mut self, data: &SyntheticDataset) -> (Sample, ObjectiveConfig) {
        let cfg = &self.cfg;
        let frame = self.rng.random_range(0..data.times.len());
        let cams = &self.train_cameras;
        let camera = match cfg.views.camera(cams, frame) {
            Some(c) => c,
            None => cams[self.rng.random_range(0..cams.len())],
        };
        let neighbor_cameras = [frame + 1, frame.wrapping_sub(1)].map(|k| cfg.views.camera(cams, k).unwrap_or(camera));
        let mask_seed: u64 = self.rng.random();
        let pair_seed: u64 = self.rng.random();
        let i = self.iteration;
        let mask = if i < cfg.mask_start() {
            FlowMask::Random {
                fraction: cfg.random_pixel_fraction,
                seed: mask_seed,
            }
        } else {
            FlowMask::Motion { tau: cfg.motion_tau }
        };
        (
            Sample {
                camera,
                frame,
                neighbor_cameras,
            },
            ObjectiveConfig {
                weights: cfg.weights,
                ranking: cfg.ranking,
                dssim: cfg.dssim,
                integrator: cfg.integrator,
                scene_flow: i >= cfg.warmup && cfg.regularized(),
                mask,
                pair_seed,
                projection: ProjectionConfig::default(),
                raster: RasterConfig::default(),
            },
        )
    }

    /// One sampled step: loss, gradient and Adam update.
    pub fn step(&mut self, data: &SyntheticDataset) -> Result<LossRecord> {
        let (sample, ocfg) = self.plan(data);
        let iter = self.iteration;
        let (terms, grad) = objective(&self.model.field, &self.model.gaussians, data, sample, &ocfg).map_err(|e| {
            Error::TrainingDiverged {
                iter,
                reason: format!(
                    "camera {} frame {} (scene flow {}): {e}",
                    sample.camera, sample.frame, ocfg.scene_flow
                ),
            }
        })?;
        let bad = grad.field.iter().any(|v| !v.is_finite())
            || grad.gaussians.iter().any(|g| {
                g.position.iter().chain(g.rotation.iter()).chain(g.log_scale.iter()).chain(g.color.iter()).any(|v| !v.is_finite())
                    || !g.opacity_logit.is_finite()
            });
        if bad || !terms.total.is_finite() {
            return Err(Error::TrainingDiverged {
                iter,
                reason: format!(
                    "non-finite loss or gradient at camera {} frame {}: {terms:?}",
                    sample.camera, sample.frame
                ),
            });
        }
        let lr = &self.cfg.gaussian_lr;
        let rates = [lr.position, lr.rotation, lr.scale, lr.opacity, lr.color];
        let mut params = pack(&self.model.gaussians);
        let grads = pack_grad(&grad.gaussians);
        for k in 0..5 {
            self.opt[k].update(&mut params[k], &grads[k], rates[k])?;
        }
        unpack(&mut self.model.gaussians, &params);
        let warp_lr = self.cfg.warp_lr.at(iter, self.cfg.iterations);
        self.opt[5].update(self.model.field.params_mut(), &grad.field, warp_lr)?;
        self.iteration += 1;
        Ok(LossRecord {
            iter,
            photometric: terms.photometric,
            flow: terms.flow,
            depth: terms.depth,
            total: terms.total,
        })
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
}

fn with_pool<T: Send>(deterministic: bool, f: impl FnOnce() -> T + Send) -> Result<T> {
    if deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

/// Runs `cfg.iterations` steps. With `out`, writes the checkpoint directory
/// (warp checkpoint, scene file, config snapshot and the per-iteration metrics CSV).
pub fn train(data: &SyntheticDataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(data, cfg.clone())?;
    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            json::write_file(&dir.join(CONFIG_FILE), cfg)?;
            Some(LossLog::create(&dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let log = with_pool(cfg.deterministic, || -> Result<Vec<LossRecord>> {
        let mut log = Vec::new();
        for _ in 0..cfg.iterations {
            let rec = trainer.step(data)?;
            if rec.iter % cfg.log_every == 0 || rec.iter + 1 == cfg.iterations {
                if let Some(f) = log_file.as_mut() {
                    f.append(&rec)?;
                }
                log.push(rec);
            }
            if rec.iter % 500 == 0 {
                log::info!(
                    "iter {} photometric {:.3e} flow {:.3e} depth {:.3e}",
                    rec.iter,
                    rec.photometric,
                    rec.flow,
                    rec.depth
                );
            }
        }
        Ok(log)
    })??;
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    let model = trainer.model;
    if let Some(dir) = out {
        save_checkpoint(dir, &model, &data.scene.cameras)?;
    }
    Ok(TrainOutcome { model, log })
}

pub fn save_checkpoint(dir: &Path, model: &Model, cameras: &[Camera]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&model.field, &dir.join(WARP_FILE))?;
    SceneFile::new(&model.gaussians, cameras).write(&dir.join(SCENE_FILE))
}

/// Loads a checkpoint directory: the model, its cameras and the config snapshot.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, Vec<Camera>, TrainConfig)> {
    let field = checkpoint::load(&dir.join(WARP_FILE))?;
    let (gaussians, cameras) = SceneFile::read(&dir.join(SCENE_FILE))?.decode()?;
    let cfg: TrainConfig = json::read_file(&dir.join(CONFIG_FILE))?;
    Ok((Model { gaussians, field }, cameras, cfg))
}

/// Renders every timestamp of each camera in `cameras` and scores it against the dataset.
pub fn evaluate(model: &Model, data: &SyntheticDataset, cameras: &[usize]) -> Result<Metrics> {
    let jobs: Vec<(usize, usize)> = cameras
        .iter()
        .flat_map(|&c| (0..data.times.len()).map(move |j| (c, j)))
        .collect();
    for &c in cameras {
        if c >= data.scene.cameras.len() {
            return Err(Error::Config(format!("camera {c} not in the dataset")));
        }
    }
    let views = jobs
        .par_iter()
        .map(|&(c, j)| {
            let cam = &data.scene.cameras[c];
            let out = model.render(cam, data.times[j])?;
            ViewMetrics::compute(c, j, &out.color, &data.frame(c, j).image, cam.width, cam.height)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics { views })
}

/// Integrated trajectories of the selected Gaussians over `times`.
pub fn trajectories(
    model: &Model,
    ids: &[usize],
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<TrajectorySample>> {
    let per = ids
        .par_iter()
        .map(|&id| {
            let g = model
                .gaussians
                .get(id)
                .ok_or_else(|| Error::Config(format!("gaussian id {id} out of range")))?;
            integrated_trajectory(&model.field, g, id, times, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Per-Gaussian trajectory endpoint error: the distance between integrated and
/// true position, averaged over every timestamp of the dataset.
pub fn trajectory_errors(model: &Model, data: &SyntheticDataset, ids: &[usize], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let samples = trajectories(model, ids, &data.times, cfg)?;
    Ok(samples
        .chunks(data.times.len())
        .map(|c| {
            c.iter()
                .map(|s| (s.position - data.scene.position(s.gaussian_id, s.t)).norm())
                .sum::<f64>()
                / c.len() as f64
        })
        .collect())
}

/// Path length of each selected Gaussian's integrated trajectory.
pub fn travel_distances(model: &Model, ids: &[usize], times: &[f64], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let samples = trajectories(model, ids, times, cfg)?;
    let per = times.len();
    Ok(samples
        .chunks(per)
        .map(|c| c.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum())
        .collect())
}

/// Nearest-rank percentile, `q ∈ [0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[cfg(test)]
mod tests;
