//! Analytic velocity of the warp field, RK4 scene-flow integration and its
//! decomposition into image-plane and depth motion.

mod field;
mod integrate;
pub mod pinv;

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

pub use field::{
    velocity_at, velocity_vjp, velocity_with_tape, IntegratorConfig, StateMode, Velocity,
    VelocityMode, VelocityTape,
};
pub use integrate::{
    integrate, integrate_source, integrate_source_vjp, integrate_vjp, integrate_with_tape,
    AnalyticVelocity, IntegrationGrad, IntegrationTape, MotionState, VelocitySource, WarpVelocity,
};
pub use pinv::pseudo_inverse;

use crate::error::{Error, Result};
use crate::scene::{compose_covariance, Camera, Gaussian};
use crate::warp::{deform, warp_input, WarpField};

/// Velocity of canonical Gaussian `g` at time `t`.
pub fn velocity(field: &WarpField, g: &Gaussian, t: f64, cfg: &IntegratorConfig) -> Result<Velocity> {
    velocity_at(field, &warp_input(g, t), cfg)
}

/// Scene flow of one Gaussian over `[t, t + dt]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFlow {
    pub displacement: Vector3<f64>,
    /// Deformed Gaussian at `t`.
    pub start: Gaussian,
    /// Integrated state at `t + dt`.
    pub end: MotionState,
    /// World covariance at `t + dt` (integrated rotation, scale held at its `t` value).
    pub end_covariance: Matrix3<f64>,
}

pub fn scene_flow(
    field: &WarpField,
    canonical: &Gaussian,
    t: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<SceneFlow> {
    let start = deform(field, canonical, t);
    let end = integrate(field, canonical, &MotionState::of(&start), t, dt, cfg)?;
    let end_covariance = compose_covariance(&end.rotation, &start.log_scale)?;
    Ok(SceneFlow {
        displacement: end.position - start.position,
        start,
        end,
        end_covariance,
    })
}

/// Splits a 3D displacement at `p` into pixel motion and camera-depth change.
/// `None` when either endpoint is not in front of the camera.
pub fn decompose_scene_flow(
    displacement: &Vector3<f64>,
    p: &Vector3<f64>,
    cam: &Camera,
    near: f64,
) -> Option<(Vector2<f64>, f64)> {
    let (u0, z0) = cam.project_point(p, near)?;
    let (u1, z1) = cam.project_point(&(p + displacement), near)?;
    Some((u1 - u0, z1 - z0))
}

/// One row of a trajectory export.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub gaussian_id: usize,
    pub t: f64,
    pub position: Vector3<f64>,
}

/// Chains integrated scene flow through `times` (ascending), starting from the
/// deformed Gaussian at `times[0]`.
pub fn integrated_trajectory(
    field: &WarpField,
    canonical: &Gaussian,
    id: usize,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<TrajectorySample>> {
    let Some(&t0) = times.first() else {
        return Ok(Vec::new());
    };
    let start = deform(field, canonical, t0);
    let mut state = MotionState::of(&start);
    let mut out = vec![TrajectorySample {
        gaussian_id: id,
        t: t0,
        position: state.position,
    }];
    for w in times.windows(2) {
        state = integrate(field, canonical, &state, w[0], w[1] - w[0], cfg)?;
        out.push(TrajectorySample {
            gaussian_id: id,
            t: w[1],
            position: state.position,
        });
    }
    Ok(out)
}

/// Writes `gaussian_id,t,x,y,z` rows.
pub fn write_trajectory_csv(path: &Path, samples: &[TrajectorySample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["gaussian_id", "t", "x", "y", "z"])?;
    for s in samples {
        w.write_record([
            s.gaussian_id.to_string(),
            s.t.to_string(),
            s.position.x.to_string(),
            s.position.y.to_string(),
            s.position.z.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectorySample>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["gaussian_id", "t", "x", "y", "z"] {
        return Err(Error::format(path, "unexpected trajectory header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("bad number {:?}", &rec[i])))
        };
        out.push(TrajectorySample {
            gaussian_id: rec[0]
                .parse()
                .map_err(|_| Error::format(path, format!("bad id {:?}", &rec[0])))?,
            t: num(1)?,
            position: Vector3::new(num(2)?, num(3)?, num(4)?),
        });
    }
    Ok(out)
}


#[cfg(test)]
mod tests;
