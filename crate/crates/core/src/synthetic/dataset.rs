//! Baked reference data and its directory layout:
//!
//! ```text
//! scene.json              spec, seed, timestamps, canonical Gaussians, motions
//! cameras.json            camera records
//! frames/cam{i}_t{j}.ppm   reference image
//! frames/cam{i}_t{j}.flow  optical flow to timestamp j + 1 (zero at the last timestamp)
//! frames/cam{i}_t{j}.bflow optical flow to timestamp j − 1 (zero at the first timestamp)
//! frames/cam{i}_t{j}.depth normalized depth, 0 where empty
//! trajectories.csv         true positions, gaussian_id,t,x,y,z
//! ```

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{oracle_state, Motion, SceneSpec, SyntheticScene};
use crate::error::{Error, Result};
use crate::io::json;
use crate::io::maps::{FloatMap, Rgb8};
use crate::raster::{render_reference, splat_gaussians, FlowEnd, RasterConfig};
use crate::scene::file::{CameraRecord, GaussianRecord};
use crate::scene::{Camera, Gaussian, ProjectionConfig};
use crate::velocity::{read_trajectory_csv, write_trajectory_csv, TrajectorySample};

pub const DATASET_VERSION: u32 = 1;

/// Reference maps for one `(camera, timestamp)`. Values are stored exactly as
/// they are on disk: 8-bit color and `f32` flow and depth, widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Vec<f64>,
    pub flow: Vec<f64>,
    pub backward_flow: Vec<f64>,
    pub depth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SceneSpec,
    pub seed: u64,
    pub scene: SyntheticScene,
    pub times: Vec<f64>,
    /// Indexed `[camera][timestamp]`.
    pub frames: Vec<Vec<Frame>>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    spec: SceneSpec,
    times: Vec<f64>,
    gaussians: Vec<GaussianRecord>,
    anchors: Vec<[f64; 3]>,
    motions: Vec<Motion>,
}

fn quantize(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

fn flow_towards(
    from: &[Gaussian],
    to: &[Gaussian],
    cam: &Camera,
    proj: &ProjectionConfig,
    raster: &RasterConfig,
) -> Result<Vec<f64>> {
    let ends = to
        .iter()
        .map(|g| {
            Ok(FlowEnd {
                position: g.position,
                cov: g.covariance()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let splats = splat_gaussians(from, Some(&ends), cam, proj)?;
    Ok(render_reference(&splats, cam.width, cam.height, raster).flow)
}

/// Renders every reference map with the per-pixel reference renderer from the exact states.
pub fn bake_references(spec: &SceneSpec, seed: u64, scene: SyntheticScene) -> Result<SyntheticDataset> {
    let times = spec.times();
    let states = times.iter().map(|&t| oracle_state(&scene, t)).collect::<Result<Vec<_>>>()?;
    let proj = ProjectionConfig::default();
    let raster = RasterConfig::default();
    let n_t = times.len();
    let jobs: Vec<(usize, usize)> = (0..scene.cameras.len()).flat_map(|c| (0..n_t).map(move |j| (c, j))).collect();
    let frames: Vec<Frame> = jobs
        .par_iter()
        .map(|&(c, j)| {
            let cam = &scene.cameras[c];
            let pixels = cam.pixel_count();
            let splats = splat_gaussians(&states[j], None, cam, &proj)?;
            let out = render_reference(&splats, cam.width, cam.height, &raster);
            let flow = if j + 1 < n_t {
                flow_towards(&states[j], &states[j + 1], cam, &proj, &raster)?
            } else {
                vec![0.0; 2 * pixels]
            };
            let backward_flow = if j > 0 {
                flow_towards(&states[j], &states[j - 1], cam, &proj, &raster)?
            } else {
                vec![0.0; 2 * pixels]
            };
            Ok(Frame {
                image: out.to_rgb8().to_unit(),
                flow: quantize(&flow),
                backward_flow: quantize(&backward_flow),
                depth: quantize(&out.depth),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grid = vec![Vec::with_capacity(n_t); scene.cameras.len()];
    for ((c, _), f) in jobs.into_iter().zip(frames) {
        grid[c].push(f);
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        seed,
        scene,
        times,
        frames: grid,
    })
}

fn frame_path(dir: &Path, cam: usize, j: usize, ext: &str) -> std::path::PathBuf {
    dir.join("frames").join(format!("cam{cam}_t{j}.{ext}"))
}

impl SyntheticDataset {
    /// Generates and bakes in one call.
    pub fn generate(spec: &SceneSpec, seed: u64) -> Result<Self> {
        let scene = super::generate_scene(spec, seed)?;
        bake_references(spec, seed, scene)
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn frame(&self, cam: usize, j: usize) -> &Frame {
        &self.frames[cam][j]
    }

    /// True trajectories of every Gaussian at every timestamp.
    pub fn true_trajectories(&self) -> Vec<TrajectorySample> {
        let mut out = Vec::new();
        for id in 0..self.scene.canonical.len() {
            for &t in &self.times {
                out.push(TrajectorySample {
                    gaussian_id: id,
                    t,
                    position: self.scene.position(id, t),
                });
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            version: DATASET_VERSION,
            seed: self.seed,
            spec: self.spec.clone(),
            times: self.times.clone(),
            gaussians: self.scene.canonical.iter().map(GaussianRecord::from).collect(),
            anchors: self.scene.anchors.iter().map(|a| (*a).into()).collect(),
            motions: self.scene.motions.clone(),
        };
        json::write_file(&dir.join("scene.json"), &manifest)?;
        let cams: Vec<CameraRecord> = self.scene.cameras.iter().map(CameraRecord::from).collect();
        json::write_file(&dir.join("cameras.json"), &cams)?;
        let (w, h) = (self.width(), self.height());
        for (c, row) in self.frames.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                Rgb8::from_unit(w, h, &f.image).write_ppm(&frame_path(dir, c, j, "ppm"))?;
                FloatMap::from_f64(h, w, 2, &f.flow).write(&frame_path(dir, c, j, "flow"))?;
                FloatMap::from_f64(h, w, 2, &f.backward_flow).write(&frame_path(dir, c, j, "bflow"))?;
                FloatMap::from_f64(h, w, 1, &f.depth).write(&frame_path(dir, c, j, "depth"))?;
            }
        }
        write_trajectory_csv(&dir.join("trajectories.csv"), &self.true_trajectories())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("scene.json");
        let m: Manifest = json::read_file(&manifest_path)?;
        if m.version != DATASET_VERSION {
            return Err(Error::format(&manifest_path, format!("unsupported dataset version {}", m.version)));
        }
        if m.gaussians.len() != m.motions.len() || m.anchors.len() != m.motions.len() {
            return Err(Error::format(&manifest_path, "gaussian, anchor and motion counts differ"));
        }
        let cams: Vec<CameraRecord> = json::read_file(&dir.join("cameras.json"))?;
        let cameras = cams.iter().map(CameraRecord::to_camera).collect::<Result<Vec<_>>>()?;
        let canonical = m.gaussians.iter().map(GaussianRecord::to_gaussian).collect::<Result<Vec<_>>>()?;
        let (w, h) = (m.spec.width, m.spec.height);
        let mut frames = Vec::with_capacity(cameras.len());
        for (c, cam) in cameras.iter().enumerate() {
            if (cam.width, cam.height) != (w, h) {
                return Err(Error::format(&dir.join("cameras.json"), "camera size differs from the scene spec"));
            }
            let mut row = Vec::with_capacity(m.times.len());
            for j in 0..m.times.len() {
                let img_path = frame_path(dir, c, j, "ppm");
                let img = Rgb8::read_ppm(&img_path)?;
                if (img.width, img.height) != (w, h) {
                    return Err(Error::format(&img_path, "image size differs from the scene spec"));
                }
                let map = |ext: &str, ch: usize| -> Result<Vec<f64>> {
                    let p = frame_path(dir, c, j, ext);
                    let fm = FloatMap::read(&p)?;
                    if (fm.height, fm.width, fm.channels) != (h, w, ch) {
                        return Err(Error::format(&p, "map shape differs from the scene spec"));
                    }
                    Ok(fm.to_f64())
                };
                row.push(Frame {
                    image: img.to_unit(),
                    flow: map("flow", 2)?,
                    backward_flow: map("bflow", 2)?,
                    depth: map("depth", 1)?,
                });
            }
            frames.push(row);
        }
        let traj = read_trajectory_csv(&dir.join("trajectories.csv"))?;
        if traj.len() != canonical.len() * m.times.len() {
            return Err(Error::format(&dir.join("trajectories.csv"), "wrong number of trajectory rows"));
        }
        Ok(Self {
            spec: m.spec,
            seed: m.seed,
            scene: SyntheticScene {
                canonical,
                anchors: m.anchors.into_iter().map(Vector3::from).collect(),
                motions: m.motions,
                cameras,
            },
            times: m.times,
            frames,
        })
    }
}
