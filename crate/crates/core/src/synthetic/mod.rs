//! Ground-truth dynamic scenes with closed-form trajectories and the
//! reference images, flow and depth maps rendered from them.

mod dataset;
mod motion;

use std::f64::consts::PI;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{bake_references, Frame, SyntheticDataset, DATASET_VERSION};
pub use motion::Motion;

use crate::error::{Error, Result};
use crate::scene::{normalize_quaternion, Camera, Gaussian};

/// Kind of motion given to the dynamic group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Linear,
    Sinusoidal,
    Circular,
}

/// Everything that determines a generated scene besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub static_count: usize,
    pub dynamic_count: usize,
    pub motion: MotionKind,
    /// Peak displacement of dynamic Gaussians (world units).
    pub amplitude: f64,
    /// Oscillation cycles (or turns) over `t ∈ [0, 1]`.
    pub cycles: f64,
    pub cameras: usize,
    pub ring_radius: f64,
    pub camera_height: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    pub timestamps: usize,
    /// Half extent of the box static Gaussians are placed in.
    pub extent: f64,
}

impl SceneSpec {
    /// Three fast sinusoidal Gaussians in front of thirty static ones, seen by an 8-camera ring.
    pub fn basic() -> Self {
        Self {
            static_count: 30,
            dynamic_count: 3,
            motion: MotionKind::Sinusoidal,
            amplitude: 0.45,
            cycles: 2.0,
            cameras: 8,
            ring_radius: 4.0,
            camera_height: 1.0,
            focal: 80.0,
            width: 64,
            height: 64,
            timestamps: 24,
            extent: 0.9,
        }
    }

    /// `basic` without the dynamic group.
    pub fn static_only() -> Self {
        Self {
            dynamic_count: 0,
            ..Self::basic()
        }
    }

    /// Looks up a named preset: `basic`, `static`, `linear`, `circular`.
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "basic" => Self::basic(),
            "static" => Self::static_only(),
            "linear" => Self {
                motion: MotionKind::Linear,
                ..Self::basic()
            },
            "circular" => Self {
                motion: MotionKind::Circular,
                cycles: 1.0,
                ..Self::basic()
            },
            other => return Err(Error::Config(format!("unknown scene spec {other:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.static_count + self.dynamic_count == 0 {
            return Err(Error::Config("scene needs at least one Gaussian".into()));
        }
        if self.cameras == 0 || self.timestamps < 2 || self.width == 0 || self.height == 0 {
            return Err(Error::Config(
                "scene needs a camera, two timestamps and a non-empty image".into(),
            ));
        }
        Ok(())
    }

    /// Uniform timestamps on `[0, 1]`.
    pub fn times(&self) -> Vec<f64> {
        let n = self.timestamps;
        (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
    }
}

/// A generated scene: canonical (t = 0) Gaussians, their motions and the camera rig.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub canonical: Vec<Gaussian>,
    /// Anchor `p₀` of each motion.
    pub anchors: Vec<Vector3<f64>>,
    pub motions: Vec<Motion>,
    pub cameras: Vec<Camera>,
}

impl SyntheticScene {
    pub fn dynamic_ids(&self) -> Vec<usize> {
        (0..self.motions.len()).filter(|&i| !self.motions[i].is_static()).collect()
    }

    pub fn static_ids(&self) -> Vec<usize> {
        (0..self.motions.len()).filter(|&i| self.motions[i].is_static()).collect()
    }

    pub fn position(&self, id: usize, t: f64) -> Vector3<f64> {
        self.motions[id].position(&self.anchors[id], t)
    }
}

/// Cameras evenly spaced on a horizontal ring, looking at the origin, world `z` up.
pub fn camera_ring(spec: &SceneSpec) -> Result<Vec<Camera>> {
    (0..spec.cameras)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / spec.cameras as f64;
            let eye = Vector3::new(spec.ring_radius * a.cos(), spec.ring_radius * a.sin(), spec.camera_height);
            Camera::look_at(eye, Vector3::zeros(), Vector3::z(), spec.focal, spec.width, spec.height)
        })
        .collect()
}

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    loop {
        let q = Vector4::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return normalize_quaternion(&q);
        }
    }
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Deterministic scene for `(spec, seed)`. Static Gaussians come first, then the dynamic group.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canonical = Vec::new();
    let mut anchors = Vec::new();
    let mut motions = Vec::new();
    let e = spec.extent;
    for _ in 0..spec.static_count {
        let p = Vector3::new(
            rng.random_range(-e..e),
            rng.random_range(-e..e),
            rng.random_range(-0.6 * e..0.6 * e),
        );
        let scale = Vector3::new(
            rng.random_range(0.12..0.3),
            rng.random_range(0.12..0.3),
            rng.random_range(0.12..0.3),
        );
        let color = Vector3::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let q = random_unit_quaternion(&mut rng);
        canonical.push(Gaussian::from_decoded(p, q, scale, rng.random_range(0.6..0.9), color));
        anchors.push(p);
        motions.push(Motion::Static);
    }
    let omega = 2.0 * PI * spec.cycles;
    for k in 0..spec.dynamic_count {
        let anchor = Vector3::new(
            rng.random_range(-0.5 * e..0.5 * e),
            rng.random_range(-0.5 * e..0.5 * e),
            rng.random_range(-0.3 * e..0.3 * e),
        );
        let dir = random_direction(&mut rng);
        let motion = match spec.motion {
            MotionKind::Linear => Motion::Linear {
                velocity: (dir * 2.0 * spec.amplitude).into(),
            },
            MotionKind::Sinusoidal => Motion::Sinusoidal {
                amplitude: (dir * spec.amplitude).into(),
                omega,
                phase: rng.random_range(0.0..2.0 * PI),
            },
            MotionKind::Circular => {
                let center = anchor - dir.cross(&Vector3::z()).normalize() * spec.amplitude;
                Motion::Circular {
                    center: center.into(),
                    axis: Vector3::z().into(),
                    omega: if k % 2 == 0 { omega } else { -omega },
                }
            }
        };
        let p0 = motion.position(&anchor, 0.0);
        let hue = [Vector3::new(0.95, 0.15, 0.1), Vector3::new(0.1, 0.9, 0.2), Vector3::new(0.15, 0.25, 0.95)];
        let s = rng.random_range(0.15..0.2);
        canonical.push(Gaussian::from_decoded(
            p0,
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            Vector3::repeat(s),
            0.95,
            hue[k % 3],
        ));
        anchors.push(anchor);
        motions.push(motion);
    }
    Ok(SyntheticScene {
        canonical,
        anchors,
        motions,
        cameras: camera_ring(spec)?,
    })
}

/// Exact Gaussians at time `t`: positions follow their motions, every other attribute is fixed.
pub fn oracle_state(scene: &SyntheticScene, t: f64) -> Result<Vec<Gaussian>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("time {t} outside [0, 1]")));
    }
    Ok(scene
        .canonical
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut g = g.clone();
            g.position = scene.position(i, t);
            g
        })
        .collect())
}

#[cfg(test)]
mod tests;
