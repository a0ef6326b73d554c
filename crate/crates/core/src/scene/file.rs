//! Versioned JSON scene document.
//!
//! ```json
//! {
//!   "version": 1,
//!   "gaussians": [
//!     { "position": [x, y, z], "rotation": [w, x, y, z], "scale": [sx, sy, sz],
//!       "opacity": o, "color": [r, g, b] }
//!   ],
//!   "cameras": [
//!     { "fx": .., "fy": .., "cx": .., "cy": .., "width": W, "height": H,
//!       "rotation": [[r00, r01, r02], [r10, r11, r12], [r20, r21, r22]],
//!       "translation": [tx, ty, tz] }
//!   ]
//! }
//! ```
//!
//! Scale and opacity are decoded values; the rotation is world-to-camera.

use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{Camera, Gaussian};
use crate::error::{Error, Result};
use crate::io::json;

pub const SCENE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GaussianRecord {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl From<&Gaussian> for GaussianRecord {
    fn from(g: &Gaussian) -> Self {
        Self {
            position: g.position.into(),
            rotation: g.rotation.into(),
            scale: g.scale().into(),
            opacity: g.opacity(),
            color: g.color.into(),
        }
    }
}

impl GaussianRecord {
    pub fn to_gaussian(&self) -> Result<Gaussian> {
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config(format!("non-positive scale {:?}", self.scale)));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(Error::Config(format!("opacity {} outside (0, 1)", self.opacity)));
        }
        Ok(Gaussian::from_decoded(
            Vector3::from(self.position),
            Vector4::from(self.rotation),
            Vector3::from(self.scale),
            self.opacity,
            Vector3::from(self.color),
        ))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: c.translation.into(),
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        let r = &self.rotation;
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(self.translation),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneFile {
    pub version: u32,
    pub gaussians: Vec<GaussianRecord>,
    pub cameras: Vec<CameraRecord>,
}

impl SceneFile {
    pub fn new(gaussians: &[Gaussian], cameras: &[Camera]) -> Self {
        Self {
            version: SCENE_VERSION,
            gaussians: gaussians.iter().map(GaussianRecord::from).collect(),
            cameras: cameras.iter().map(CameraRecord::from).collect(),
        }
    }

    pub fn decode(&self) -> Result<(Vec<Gaussian>, Vec<Camera>)> {
        let gaussians = self
            .gaussians
            .iter()
            .map(GaussianRecord::to_gaussian)
            .collect::<Result<_>>()?;
        let cameras = self
            .cameras
            .iter()
            .map(CameraRecord::to_camera)
            .collect::<Result<_>>()?;
        Ok((gaussians, cameras))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        json::write_file(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let scene: Self = json::read_file(path)?;
        if scene.version != SCENE_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported scene version {}", scene.version),
            ));
        }
        Ok(scene)
    }
}
