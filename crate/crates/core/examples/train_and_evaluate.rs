//! Trains a model on the standard scene, writes the checkpoint directory and
//! reports held-out PSNR/SSIM.
//!
//! `cargo run --release --example train_and_evaluate [config.json] [out_dir]`
//!
//! Without a config a short 600-iteration run is used.

use std::path::{Path, PathBuf};

use splatflow::synthetic::{SceneSpec, SyntheticDataset};
use splatflow::train::{evaluate, train, TrainConfig};

fn main() -> splatflow::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg: TrainConfig = match args.first() {
        Some(p) => splatflow::io::json::read_file(Path::new(p))?,
        None => TrainConfig {
            iterations: 600,
            warmup: 300,
            ..TrainConfig::default()
        },
    };
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("checkpoint"));

    let data = SyntheticDataset::generate(&SceneSpec::basic(), 7)?;
    let start = std::time::Instant::now();
    let result = train(&data, &cfg, Some(&out))?;
    let secs = start.elapsed().as_secs_f64();

    for rec in result.log.iter().step_by((result.log.len() / 10).max(1)) {
        println!(
            "iter {:5}  photometric {:.3e}  flow {:.3e}  depth {:.3e}",
            rec.iter, rec.photometric, rec.flow, rec.depth
        );
    }
    let metrics = evaluate(&result.model, &data, &cfg.holdout_cameras)?;
    metrics.write_csv(&out.join("eval.csv"))?;
    println!(
        "{} iterations in {secs:.1}s; held-out PSNR {:.2} dB, SSIM {:.4}",
        cfg.iterations,
        metrics.mean_psnr(),
        metrics.mean_ssim()
    );
    println!("checkpoint in {}", out.display());
    Ok(())
}
