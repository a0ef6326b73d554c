//! Trains photometric-only and scene-flow-regularized models on the standard
//! synthetic scene and compares trajectory error, held-out PSNR and motion separation.
//!
//! `cargo run --release --example ablation [config.json]`, defaulting to
//! `configs/ablation.json`.

use std::time::Instant;

use splatflow::synthetic::{SceneSpec, SyntheticDataset};
use splatflow::train::{trajectory_errors, evaluate, percentile, train, travel_distances, TrainConfig};

fn main() -> splatflow::Result<()> {
    env_logger::init();
    let cfg: TrainConfig = match std::env::args().nth(1) {
        Some(path) => splatflow::io::json::read_file(std::path::Path::new(&path))?,
        None => serde_json::from_str(include_str!("../configs/ablation.json"))?,
    };
    let data = SyntheticDataset::generate(&SceneSpec::basic(), 7)?;
    let dynamic = data.scene.dynamic_ids();
    let stat = data.scene.static_ids();
    for (name, alpha, beta) in [("photometric", 0.0, 0.0), ("regularized", cfg.weights.alpha, cfg.weights.beta)] {
        let mut c = cfg.clone();
        c.weights.alpha = alpha;
        c.weights.beta = beta;
        let start = Instant::now();
        let out = train(&data, &c, None)?;
        let secs = start.elapsed().as_secs_f64();
        let err = trajectory_errors(&out.model, &data, &dynamic, &c.integrator)?;
        let mean_err = err.iter().sum::<f64>() / err.len() as f64;
        let psnr = evaluate(&out.model, &data, &c.holdout_cameras)?.mean_psnr();
        let s_travel = travel_distances(&out.model, &stat, &data.times, &c.integrator)?;
        let d_travel = travel_distances(&out.model, &dynamic, &data.times, &c.integrator)?;
        println!(
            "{name}: {secs:.1}s endpoint {mean_err:.4} {err:.3?} psnr {psnr:.2} static p95 {:.4} dynamic p5 {:.4}",
            percentile(&s_travel, 95.0),
            percentile(&d_travel, 5.0)
        );
    }
    Ok(())
}
