//! Command-line front end: `gen`, `train`, `render`, `flow`, `trajectories` and `eval`.
//!
//! Every command records the flags it ran with next to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::json;
use crate::synthetic::{SceneSpec, SyntheticDataset};
use crate::train::{evaluate, load_checkpoint, train, trajectories, TrainConfig};
use crate::velocity::write_trajectory_csv;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "splatflow", version, about = "Scene-flow-regularized deformable Gaussian splatting")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset and write a checkpoint directory.
    Train(Box<TrainArgs>),
    /// Render color, depth and alpha of a checkpoint at one time.
    Render(RenderArgs),
    /// Render the integrated optical flow of a checkpoint over `[t, t + dt]`.
    Flow(FlowArgs),
    /// Export integrated trajectories of selected Gaussians as CSV.
    Trajectories(TrajectoryArgs),
    /// Score held-out views of a checkpoint against a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenArgs {
    /// Named spec (basic, static, linear, circular) or a SceneSpec JSON file.
    #[arg(long, default_value = "basic")]
    spec: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// TrainConfig JSON used as the base; the flags below override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Total iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Photometric-only iterations before the scene-flow terms switch on.
    #[arg(long)]
    warmup: Option<usize>,
    /// Iteration at which the motion mask replaces the random-pixel mask (default: 2× warm-up).
    #[arg(long)]
    mask_start: Option<usize>,
    /// Fraction of pixels kept by the random flow mask.
    #[arg(long)]
    random_pixel_fraction: Option<f64>,
    /// Motion-mask threshold on flow magnitude over the image diagonal.
    #[arg(long)]
    motion_tau: Option<f64>,
    /// Flow-loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Depth-loss weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Depth-ranking margin.
    #[arg(long)]
    margin: Option<f64>,
    /// Depth-ranking pixel pairs per image.
    #[arg(long)]
    ranking_pairs: Option<usize>,
    /// Side of the depth-ranking pair window in pixels.
    #[arg(long)]
    ranking_window: Option<usize>,
    /// Reference-depth tie band of the ranking loss.
    #[arg(long)]
    dead_band: Option<f64>,
    /// D-SSIM share of the photometric term.
    #[arg(long)]
    dssim: Option<f64>,
    /// RK4 steps per frame interval.
    #[arg(long)]
    rk_steps: Option<usize>,
    /// Velocity formation.
    #[arg(long, value_parser = ["pseudoinverse", "direct"])]
    velocity: Option<String>,
    /// Network input at intermediate RK4 stages.
    #[arg(long, value_parser = ["canonical", "feedback"])]
    rk_state: Option<String>,
    /// Relative singular-value cutoff of the pseudoinverse.
    #[arg(long)]
    pinv_tolerance: Option<f64>,
    /// Integrate rotations as well as positions.
    #[arg(long)]
    rotate: Option<bool>,
    /// Frequency bands of the position encoding.
    #[arg(long)]
    position_bands: Option<usize>,
    /// Frequency bands of the time encoding.
    #[arg(long)]
    time_bands: Option<usize>,
    /// Hidden layers of the warp network.
    #[arg(long)]
    hidden_layers: Option<usize>,
    /// Width of each hidden layer.
    #[arg(long)]
    width: Option<usize>,
    /// Hidden activation.
    #[arg(long, value_parser = ["softplus", "tanh"])]
    activation: Option<String>,
    /// Initial warp-network learning rate.
    #[arg(long)]
    warp_lr_start: Option<f64>,
    /// Final warp-network learning rate.
    #[arg(long)]
    warp_lr_end: Option<f64>,
    #[arg(long)]
    lr_position: Option<f64>,
    #[arg(long)]
    lr_rotation: Option<f64>,
    #[arg(long)]
    lr_scale: Option<f64>,
    #[arg(long)]
    lr_opacity: Option<f64>,
    #[arg(long)]
    lr_color: Option<f64>,
    /// Adam first-moment decay.
    #[arg(long)]
    adam_beta1: Option<f64>,
    /// Adam second-moment decay.
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Standard deviation of the initial position perturbation.
    #[arg(long)]
    init_noise_position: Option<f64>,
    /// Standard deviation of the initial log-scale perturbation.
    #[arg(long)]
    init_noise_scale: Option<f64>,
    /// Standard deviation of the initial color perturbation.
    #[arg(long)]
    init_noise_color: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated cameras excluded from training.
    #[arg(long, value_delimiter = ',')]
    holdout: Option<Vec<usize>>,
    /// Which training cameras observe each timestamp.
    #[arg(long, value_parser = ["monocular", "all"])]
    views: Option<String>,
    /// Loss-log cadence in iterations.
    #[arg(long)]
    log_every: Option<usize>,
    /// Single-worker, order-fixed reductions (`--deterministic false` to parallelize).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
struct ViewArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    /// Camera index in the checkpoint's rig.
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// Time in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    #[command(flatten)]
    view: ViewArgs,
}

#[derive(Debug, Args, Serialize)]
struct FlowArgs {
    #[command(flatten)]
    view: ViewArgs,
    /// Integration interval (default: one frame of a 24-timestamp sequence).
    #[arg(long, default_value_t = 1.0 / 23.0, allow_negative_numbers = true)]
    dt: f64,
}

#[derive(Debug, Args, Serialize)]
struct TrajectoryArgs {
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    /// Comma-separated Gaussian ids.
    #[arg(long, value_delimiter = ',', required = true)]
    ids: Vec<usize>,
    /// Uniform sample times on [0, 1].
    #[arg(long, default_value_t = 24)]
    timestamps: usize,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Comma-separated cameras to score (default: the checkpoint's held-out cameras).
    #[arg(long, value_delimiter = ',')]
    cameras: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

struct Usage(String);

fn require_dir(path: &Path, flag: &str) -> std::result::Result<(), Usage> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Usage(format!("{flag} {}: no such directory", path.display())))
    }
}

fn require_file(path: &Path, flag: &str) -> std::result::Result<(), Usage> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Usage(format!("{flag} {}: no such file", path.display())))
    }
}

fn parse_enum<T: DeserializeOwned>(value: &str) -> Result<T> {
    Ok(serde_json::from_value(serde_json::Value::String(value.into()))?)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => json::read_file(p)?,
            None => TrainConfig::default(),
        };
        set(&mut c.iterations, self.iters);
        set(&mut c.warmup, self.warmup);
        if self.mask_start.is_some() {
            c.mask_start = self.mask_start;
        }
        set(&mut c.random_pixel_fraction, self.random_pixel_fraction);
        set(&mut c.motion_tau, self.motion_tau);
        set(&mut c.weights.alpha, self.alpha);
        set(&mut c.weights.beta, self.beta);
        set(&mut c.weights.margin, self.margin);
        set(&mut c.ranking.pairs, self.ranking_pairs);
        set(&mut c.ranking.window, self.ranking_window);
        set(&mut c.ranking.dead_band, self.dead_band);
        set(&mut c.dssim, self.dssim);
        set(&mut c.integrator.steps, self.rk_steps);
        if let Some(v) = &self.velocity {
            c.integrator.velocity = parse_enum(v)?;
        }
        if let Some(v) = &self.rk_state {
            c.integrator.state = parse_enum(v)?;
        }
        set(&mut c.integrator.pinv_tolerance, self.pinv_tolerance);
        set(&mut c.integrator.rotate, self.rotate);
        set(&mut c.warp.position_bands, self.position_bands);
        set(&mut c.warp.time_bands, self.time_bands);
        set(&mut c.warp.hidden_layers, self.hidden_layers);
        set(&mut c.warp.width, self.width);
        if let Some(v) = &self.activation {
            c.warp.activation = parse_enum(v)?;
        }
        set(&mut c.warp_lr.start, self.warp_lr_start);
        set(&mut c.warp_lr.end, self.warp_lr_end);
        set(&mut c.gaussian_lr.position, self.lr_position);
        set(&mut c.gaussian_lr.rotation, self.lr_rotation);
        set(&mut c.gaussian_lr.scale, self.lr_scale);
        set(&mut c.gaussian_lr.opacity, self.lr_opacity);
        set(&mut c.gaussian_lr.color, self.lr_color);
        set(&mut c.betas.0, self.adam_beta1);
        set(&mut c.betas.1, self.adam_beta2);
        set(&mut c.adam_eps, self.adam_eps);
        set(&mut c.init_noise.position, self.init_noise_position);
        set(&mut c.init_noise.log_scale, self.init_noise_scale);
        set(&mut c.init_noise.color, self.init_noise_color);
        set(&mut c.seed, self.seed);
        set(&mut c.holdout_cameras, self.holdout.clone());
        if let Some(v) = &self.views {
            c.views = parse_enum(v)?;
        }
        set(&mut c.log_every, self.log_every);
        set(&mut c.deterministic, self.deterministic);
        c.validate()?;
        Ok(c)
    }
}

fn snapshot(path: &Path, cli: &Cli) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    json::write_file(path, cli)
}

fn check_paths(cmd: &Command) -> std::result::Result<(), Usage> {
    match cmd {
        Command::Gen(a) => {
            if SceneSpec::named(&a.spec).is_err() {
                require_file(Path::new(&a.spec), "--spec")?;
            }
        }
        Command::Train(a) => {
            require_dir(&a.data, "--data")?;
            if let Some(c) = &a.config {
                require_file(c, "--config")?;
            }
        }
        Command::Render(RenderArgs { view }) | Command::Flow(FlowArgs { view, .. }) => require_dir(&view.ckpt, "--ckpt")?,
        Command::Trajectories(a) => require_dir(&a.ckpt, "--ckpt")?,
        Command::Eval(a) => {
            require_dir(&a.ckpt, "--ckpt")?;
            require_dir(&a.data, "--data")?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => {
            let spec = match SceneSpec::named(&a.spec) {
                Ok(s) => s,
                Err(_) => json::read_file(Path::new(&a.spec))?,
            };
            let data = SyntheticDataset::generate(&spec, a.seed)?;
            data.write(&a.out)?;
            snapshot(&a.out.join("gen.json"), cli)
        }
        Command::Train(a) => {
            let cfg = a.config()?;
            let data = SyntheticDataset::read(&a.data)?;
            snapshot(&a.out.join("train.json"), cli)?;
            let out = train(&data, &cfg, Some(&a.out))?;
            if let Some(last) = out.log.last() {
                println!("iter {} total loss {:.6e}", last.iter, last.total);
            }
            Ok(())
        }
        Command::Render(RenderArgs { view }) => {
            let (model, cameras, _) = load_checkpoint(&view.ckpt)?;
            let cam = camera(&cameras, view.camera)?;
            let out = model.render(cam, view.t)?;
            std::fs::create_dir_all(&view.out).map_err(|e| Error::io(&view.out, e))?;
            out.write_all(&view.out, "render")?;
            snapshot(&view.out.join("render.json"), cli)
        }
        Command::Flow(a) => {
            let view = &a.view;
            let (model, cameras, cfg) = load_checkpoint(&view.ckpt)?;
            let cam = camera(&cameras, view.camera)?;
            let out = model.render_flow(cam, view.t, a.dt, &cfg.integrator)?;
            std::fs::create_dir_all(&view.out).map_err(|e| Error::io(&view.out, e))?;
            out.write_all(&view.out, "flow")?;
            snapshot(&view.out.join("flow.json"), cli)
        }
        Command::Trajectories(a) => {
            let (model, _, cfg) = load_checkpoint(&a.ckpt)?;
            if let Some(&bad) = a.ids.iter().find(|&&i| i >= model.gaussians.len()) {
                return Err(Error::Config(format!(
                    "Gaussian id {bad} out of range for {} Gaussians",
                    model.gaussians.len()
                )));
            }
            let times = uniform_times(a.timestamps)?;
            let samples = trajectories(&model, &a.ids, &times, &cfg.integrator)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            write_trajectory_csv(&a.out, &samples)?;
            snapshot(&a.out.with_extension("json"), cli)
        }
        Command::Eval(a) => {
            let (model, _, cfg) = load_checkpoint(&a.ckpt)?;
            let data = SyntheticDataset::read(&a.data)?;
            let cams = a.cameras.clone().unwrap_or(cfg.holdout_cameras);
            if let Some(&bad) = cams.iter().find(|&&c| c >= data.scene.cameras.len()) {
                return Err(Error::Config(format!("camera {bad} not in the dataset")));
            }
            let metrics = evaluate(&model, &data, &cams)?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            metrics.write_csv(&a.out.join("eval.csv"))?;
            println!("PSNR {:.3} dB  SSIM {:.4}", metrics.mean_psnr(), metrics.mean_ssim());
            snapshot(&a.out.join("eval.json"), cli)
        }
    }
}

fn camera(cameras: &[crate::scene::Camera], i: usize) -> Result<&crate::scene::Camera> {
    cameras
        .get(i)
        .ok_or_else(|| Error::Config(format!("camera {i} not in a rig of {}", cameras.len())))
}

fn uniform_times(n: usize) -> Result<Vec<f64>> {
    match n {
        0 => Err(Error::Config("need at least one timestamp".into())),
        1 => Ok(vec![0.0]),
        _ => Ok((0..n).map(|j| j as f64 / (n - 1) as f64).collect()),
    }
}

/// Parses `argv` (program name first) and runs the command.
/// Returns 0 on success, 1 on a usage error and 2 on a runtime failure.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(Usage(msg)) = check_paths(&cli.command) {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(Error::Config(format!("thread pool: {e}"))),
        },
        None => run(&cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
