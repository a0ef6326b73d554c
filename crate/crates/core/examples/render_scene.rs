//! Renders the ground-truth state of the standard scene with the tiled
//! rasterizer, checks it against the per-pixel reference renderer and writes
//! color, flow, depth and alpha maps.
//!
//! `cargo run --release --example render_scene [out_dir] [t]`

use std::path::PathBuf;
use std::time::Instant;

use splatflow::raster::{render, render_reference, splat_gaussians, FlowEnd, RasterConfig};
use splatflow::scene::{compose_covariance, ProjectionConfig};
use splatflow::synthetic::{generate_scene, oracle_state, SceneSpec};

fn main() -> splatflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("render"));
    let t: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let dt = 1.0 / 23.0;

    let spec = SceneSpec::basic();
    let scene = generate_scene(&spec, 7)?;
    let now = oracle_state(&scene, t)?;
    let next = oracle_state(&scene, t + dt)?;
    let ends = next
        .iter()
        .map(|g| {
            Ok(FlowEnd {
                position: g.position,
                cov: compose_covariance(&g.rotation, &g.log_scale)?,
            })
        })
        .collect::<splatflow::Result<Vec<_>>>()?;

    std::fs::create_dir_all(&out).map_err(|e| splatflow::Error::Config(format!("{}: {e}", out.display())))?;
    let raster = RasterConfig::default();
    for (c, cam) in scene.cameras.iter().enumerate() {
        let splats = splat_gaussians(&now, Some(&ends), cam, &ProjectionConfig::default())?;
        let start = Instant::now();
        let tiled = render(&splats, cam.width, cam.height, &raster);
        let took = start.elapsed();
        let reference = render_reference(&splats, cam.width, cam.height, &raster);
        let same = tiled == reference;
        let covered = tiled.alpha.iter().filter(|&&a| a > 0.5).count();
        println!(
            "camera {c}: {} splats, {covered} covered pixels, tiled {:.2} ms, identical to reference: {same}",
            splats.len(),
            took.as_secs_f64() * 1e3
        );
        tiled.write_all(&out, &format!("cam{c}"))?;
    }
    println!("maps written to {}", out.display());
    Ok(())
}
