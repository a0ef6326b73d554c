//! Integrates the learned velocity field of a checkpoint and compares the
//! trajectories of every Gaussian with the closed-form ground truth.
//!
//! `cargo run --release --example trajectories <checkpoint_dir> [out.csv]`
//!
//! The checkpoint must come from the standard scene (see `train_and_evaluate`).

use std::path::Path;

use splatflow::synthetic::{SceneSpec, SyntheticDataset};
use splatflow::train::{load_checkpoint, percentile, trajectories, trajectory_errors, travel_distances};
use splatflow::velocity::write_trajectory_csv;

fn main() -> splatflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(ckpt) = args.first() else {
        eprintln!("usage: trajectories <checkpoint_dir> [out.csv]");
        std::process::exit(1);
    };
    let (model, _, cfg) = load_checkpoint(Path::new(ckpt))?;
    let data = SyntheticDataset::generate(&SceneSpec::basic(), 7)?;
    let dynamic = data.scene.dynamic_ids();
    let stat = data.scene.static_ids();

    let err = trajectory_errors(&model, &data, &dynamic, &cfg.integrator)?;
    for (id, e) in dynamic.iter().zip(&err) {
        println!("dynamic Gaussian {id}: mean trajectory error {e:.4}");
    }
    let s = travel_distances(&model, &stat, &data.times, &cfg.integrator)?;
    let d = travel_distances(&model, &dynamic, &data.times, &cfg.integrator)?;
    println!(
        "travel: static p95 {:.4}, dynamic p5 {:.4}",
        percentile(&s, 95.0),
        percentile(&d, 5.0)
    );

    let all: Vec<usize> = (0..model.gaussians.len()).collect();
    let out = args.get(1).map(String::as_str).unwrap_or("trajectories.csv");
    write_trajectory_csv(Path::new(out), &trajectories(&model, &all, &data.times, &cfg.integrator)?)?;
    println!("integrated trajectories written to {out}");
    Ok(())
}
