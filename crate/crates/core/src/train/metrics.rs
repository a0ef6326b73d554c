use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{ssim, SsimConfig};

/// Reported PSNR of identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log₁₀(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", y.len()),
            actual: format!("{}", x.len()),
        });
    }
    let mse = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Quality of one rendered view against its reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewMetrics {
    pub camera: usize,
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

impl ViewMetrics {
    pub fn compute(camera: usize, frame: usize, rendered: &[f64], reference: &[f64], width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            camera,
            frame,
            psnr: psnr(rendered, reference)?,
            ssim: ssim(rendered, reference, width, height, 3, &SsimConfig::default())?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub views: Vec<ViewMetrics>,
}

impl Metrics {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.views.iter().map(|v| v.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.views.iter().map(|v| v.ssim))
    }

    /// `camera,frame,psnr,ssim` rows followed by a `mean` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let io = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["camera", "frame", "psnr", "ssim"]).map_err(io)?;
        for v in &self.views {
            w.write_record([
                v.camera.to_string(),
                v.frame.to_string(),
                format!("{:e}", v.psnr),
                format!("{:e}", v.ssim),
            ])
            .map_err(io)?;
        }
        w.write_record([
            "mean".to_string(),
            String::new(),
            format!("{:e}", self.mean_psnr()),
            format!("{:e}", self.mean_ssim()),
        ])
        .map_err(io)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
