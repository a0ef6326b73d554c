//! Photometric, optical-flow and depth-ranking objectives, motion masks and
//! the loss-curve log. Every loss returns its value with the gradient with
//! respect to the rendered input.

mod ssim;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ssim::{ssim, ssim_with_grad, SsimConfig};

use crate::error::{Error, Result};

/// Coefficients of the scene-flow regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Flow-loss coefficient.
    pub alpha: f64,
    /// Depth-loss coefficient.
    pub beta: f64,
    /// Depth-ranking margin.
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            margin: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("margin", self.margin)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// A loss value with its gradient with respect to the rendered input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: format!("{b} values"),
            actual: format!("{a}"),
        });
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn photometric_loss(rendered: &[f64], reference: &[f64]) -> Result<LossGrad> {
    check_len(rendered.len(), reference.len())?;
    if rendered.is_empty() {
        return Ok(LossGrad { value: 0.0, grad: Vec::new() });
    }
    let n = rendered.len() as f64;
    let mut value = 0.0;
    let grad = rendered
        .iter()
        .zip(reference)
        .map(|(r, t)| {
            let d = r - t;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(LossGrad { value: value / n, grad })
}

/// Photometric term with an optional D-SSIM mix: `(1 − λ)·MSE + λ·(1 − SSIM)/2`.
pub fn photometric_dssim_loss(
    rendered: &[f64],
    reference: &[f64],
    width: usize,
    height: usize,
    lambda: f64,
) -> Result<LossGrad> {
    let mut l = photometric_loss(rendered, reference)?;
    if lambda == 0.0 {
        return Ok(l);
    }
    let (s, g) = ssim_with_grad(rendered, reference, width, height, 3, &SsimConfig::default())?;
    l.value = (1.0 - lambda) * l.value + lambda * (1.0 - s) / 2.0;
    for (a, b) in l.grad.iter_mut().zip(&g) {
        *a = (1.0 - lambda) * *a - lambda * b / 2.0;
    }
    Ok(l)
}

/// Mean absolute error over the selected pixels' two flow components.
/// `mask` (per pixel) selects pixels; `None` uses every pixel. An empty
/// selection yields zero with a warning.
pub fn flow_loss(rendered: &[f64], reference: &[f64], mask: Option<&[bool]>) -> Result<LossGrad> {
    check_len(rendered.len(), reference.len())?;
    let pixels = rendered.len() / 2;
    if let Some(m) = mask {
        check_len(m.len(), pixels)?;
    }
    let selected = |p: usize| mask.is_none_or(|m| m[p]);
    let count = (0..pixels).filter(|&p| selected(p)).count();
    let mut grad = vec![0.0; rendered.len()];
    if count == 0 {
        log::warn!("flow loss over an empty mask");
        return Ok(LossGrad { value: 0.0, grad });
    }
    let n = (2 * count) as f64;
    let mut value = 0.0;
    for p in (0..pixels).filter(|&p| selected(p)) {
        for c in 0..2 {
            let d = rendered[2 * p + c] - reference[2 * p + c];
            value += d.abs();
            grad[2 * p + c] = if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
    }
    Ok(LossGrad { value: value / n, grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    /// Pixel pairs per image.
    pub pairs: usize,
    /// Side of the square window the second pixel is drawn from.
    pub window: usize,
    /// Reference depths closer than this are treated as ties and skipped.
    pub dead_band: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            pairs: 1024,
            window: 16,
            dead_band: 1e-4,
        }
    }
}

/// Draws `cfg.pairs` pixel pairs; the second pixel lies within a window centered on the first.
pub fn sample_pairs(width: usize, height: usize, cfg: &RankingConfig, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (cfg.window / 2).max(1) as i64;
    let mut out = Vec::with_capacity(cfg.pairs);
    if width * height < 2 {
        return out;
    }
    while out.len() < cfg.pairs {
        let x = rng.random_range(0..width) as i64;
        let y = rng.random_range(0..height) as i64;
        let x2 = (x + rng.random_range(-half..=half)).clamp(0, width as i64 - 1);
        let y2 = (y + rng.random_range(-half..=half)).clamp(0, height as i64 - 1);
        if (x2, y2) == (x, y) {
            continue;
        }
        out.push(((y * width as i64 + x) as usize, (y2 * width as i64 + x2) as usize));
    }
    out
}

/// Hinge `max(d_r[near] − d_r[far] + m, 0)` over pairs whose reference order
/// is strict beyond the dead band, averaged over those pairs. Pairs touching
/// a non-positive reference depth (the empty sentinel) or an invalid pixel are skipped.
pub fn depth_ranking_loss(
    rendered: &[f64],
    reference: &[f64],
    pairs: &[(usize, usize)],
    margin: f64,
    dead_band: f64,
    valid: Option<&[bool]>,
) -> Result<LossGrad> {
    check_len(rendered.len(), reference.len())?;
    if let Some(v) = valid {
        check_len(v.len(), rendered.len())?;
    }
    let mut grad = vec![0.0; rendered.len()];
    let ok = |k: usize| reference[k] > 0.0 && valid.is_none_or(|v| v[k]);
    let mut terms = Vec::new();
    for &(a, b) in pairs {
        if !ok(a) || !ok(b) {
            continue;
        }
        let (near, far) = if reference[a] < reference[b] - dead_band {
            (a, b)
        } else if reference[b] < reference[a] - dead_band {
            (b, a)
        } else {
            continue;
        };
        terms.push((near, far));
    }
    if terms.is_empty() {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let n = terms.len() as f64;
    let mut value = 0.0;
    for (near, far) in terms {
        let h = rendered[near] - rendered[far] + margin;
        if h > 0.0 {
            value += h;
            grad[near] += 1.0 / n;
            grad[far] -= 1.0 / n;
        }
    }
    Ok(LossGrad { value: value / n, grad })
}

/// `α·L_o + β·L_d`.
pub fn scene_flow_loss(flow_term: f64, depth_term: f64, w: &LossWeights) -> f64 {
    w.alpha * flow_term + w.beta * depth_term
}

/// Pixels whose flow magnitude, divided by the image diagonal, exceeds `tau`.
pub fn motion_mask(flow: &[f64], width: usize, height: usize, tau: f64) -> Vec<bool> {
    let diag = ((width * width + height * height) as f64).sqrt();
    flow.chunks_exact(2)
        .map(|f| (f[0] * f[0] + f[1] * f[1]).sqrt() / diag > tau)
        .collect()
}

/// Uniformly selects about `fraction` of `pixels`.
pub fn random_pixel_mask(pixels: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pixels).map(|_| rng.random::<f64>() < fraction).collect()
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub photometric: f64,
    pub flow: f64,
    pub depth: f64,
    pub total: f64,
}

pub const LOSS_LOG_HEADER: &str = "iter,photometric,flow,depth,total";

/// Appends rows to `iter,photometric,flow,depth,total`, writing the header for a new file.
pub struct LossLog {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<Self> {
        let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        };
        if !exists {
            writeln!(log.file, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(log)
    }

    pub fn append(&mut self, r: &LossRecord) -> Result<()> {
        writeln!(
            self.file,
            "{},{:e},{:e},{:e},{:e}",
            r.iter, r.photometric, r.flow, r.depth, r.total
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>().join(",") != LOSS_LOG_HEADER {
        return Err(Error::format(path, "unexpected loss log header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("bad number {:?}", &rec[i])))
        };
        out.push(LossRecord {
            iter: rec[0].parse().map_err(|_| Error::format(path, "bad iteration"))?,
            photometric: num(1)?,
            flow: num(2)?,
            depth: num(3)?,
            total: num(4)?,
        });
    }
    Ok(out)
}
