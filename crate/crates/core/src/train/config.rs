use serde::{Deserialize, Serialize};

use super::adam::ExpDecay;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, RankingConfig};
use crate::velocity::IntegratorConfig;
use crate::warp::WarpConfig;

/// Per-attribute learning rates of the canonical Gaussians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLr {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for GaussianLr {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 0.05,
            color: 2.5e-3,
        }
    }
}

/// How the initial canonical Gaussians are derived from the dataset's canonical state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitNoise {
    /// Standard deviation of the position perturbation (world units).
    pub position: f64,
    /// Standard deviation of the log-scale perturbation.
    pub log_scale: f64,
    /// Standard deviation of the color perturbation.
    pub color: f64,
}

impl Default for InitNoise {
    fn default() -> Self {
        Self {
            position: 0.02,
            log_scale: 0.05,
            color: 0.05,
        }
    }
}

/// Which training cameras observe each timestamp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSchedule {
    /// Timestamp `j` is seen only by training camera `j mod n`: a monocular
    /// video that hops around the rig.
    #[default]
    Monocular,
    /// Every training camera sees every timestamp.
    All,
}

impl ViewSchedule {
    /// The training camera observing frame `j`, or `None` when any may.
    pub fn camera(self, cameras: &[usize], j: usize) -> Option<usize> {
        match self {
            ViewSchedule::Monocular => Some(cameras[j % cameras.len()]),
            ViewSchedule::All => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Photometric-only iterations before the scene-flow terms switch on.
    pub warmup: usize,
    /// Iteration at which the random-pixel flow mask gives way to the motion
    /// mask; `None` means twice the warm-up.
    pub mask_start: Option<usize>,
    /// Fraction of pixels kept by the random flow mask.
    pub random_pixel_fraction: f64,
    /// Motion-mask threshold on flow magnitude over the image diagonal.
    pub motion_tau: f64,
    pub weights: LossWeights,
    pub ranking: RankingConfig,
    /// D-SSIM share of the photometric term (0 is plain MSE).
    pub dssim: f64,
    pub integrator: IntegratorConfig,
    pub warp: WarpConfig,
    pub warp_lr: ExpDecay,
    pub gaussian_lr: GaussianLr,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub init_noise: InitNoise,
    pub seed: u64,
    /// Cameras never sampled for training; used by evaluation.
    pub holdout_cameras: Vec<usize>,
    pub views: ViewSchedule,
    /// Loss-log cadence.
    pub log_every: usize,
    /// Run every parallel section on one worker.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 8000,
            warmup: 3000,
            mask_start: None,
            random_pixel_fraction: 0.25,
            motion_tau: 0.1,
            weights: LossWeights::default(),
            ranking: RankingConfig::default(),
            dssim: 0.0,
            integrator: IntegratorConfig::default(),
            warp: WarpConfig::default(),
            warp_lr: ExpDecay { start: 8e-4, end: 1.6e-6 },
            gaussian_lr: GaussianLr::default(),
            betas: (0.9, 0.999),
            adam_eps: 1e-15,
            init_noise: InitNoise::default(),
            seed: 42,
            holdout_cameras: vec![0],
            views: ViewSchedule::Monocular,
            log_every: 10,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn mask_start(&self) -> usize {
        self.mask_start.unwrap_or(2 * self.warmup)
    }

    /// A scene-flow weight is nonzero.
    pub fn regularized(&self) -> bool {
        self.weights.alpha > 0.0 || self.weights.beta > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup > self.iterations {
            return Err(Error::Config(format!(
                "warm-up {} exceeds the {} total iterations",
                self.warmup, self.iterations
            )));
        }
        self.weights.validate()?;
        self.integrator.validate()?;
        let lr = &self.gaussian_lr;
        for (name, v) in [
            ("warp start", self.warp_lr.start),
            ("warp end", self.warp_lr.end),
            ("position", lr.position),
            ("rotation", lr.rotation),
            ("scale", lr.scale),
            ("opacity", lr.opacity),
            ("color", lr.color),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("learning rate {name} = {v} must be positive")));
            }
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("Adam betas ({b1}, {b2}) outside [0, 1)")));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dssim) {
            return Err(Error::Config(format!("D-SSIM share {} outside [0, 1]", self.dssim)));
        }
        if !(self.random_pixel_fraction > 0.0 && self.random_pixel_fraction <= 1.0) {
            return Err(Error::Config("random pixel fraction must be in (0, 1]".into()));
        }
        if !(self.motion_tau >= 0.0) {
            return Err(Error::Config("motion threshold must be ≥ 0".into()));
        }
        if self.ranking.pairs == 0 {
            return Err(Error::Config("depth ranking needs at least one pair".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log cadence must be ≥ 1".into()));
        }
        Ok(())
    }
}
