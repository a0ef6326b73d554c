use std::path::Path;

use crate::error::Result;
use crate::io::maps::{FloatMap, Rgb8};

/// All maps from one compositing pass. Row-major, pixel `(col, row)` at index
/// `row * width + col`, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// 3 channels.
    pub color: Vec<f64>,
    /// Accumulated weight `Σ T_i α_i`.
    pub alpha: Vec<f64>,
    /// 2 channels, `Σ T_i α_i f_i`.
    pub flow_raw: Vec<f64>,
    /// `flow_raw / alpha` where `alpha` exceeds the normalization threshold, else 0.
    pub flow: Vec<f64>,
    /// `Σ T_i α_i d_i`.
    pub depth_raw: Vec<f64>,
    pub depth: Vec<f64>,
}

impl RenderOutput {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![0.0; 3 * n],
            alpha: vec![0.0; n],
            flow_raw: vec![0.0; 2 * n],
            flow: vec![0.0; 2 * n],
            depth_raw: vec![0.0; n],
            depth: vec![0.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn color_map(&self) -> FloatMap {
        FloatMap::from_f64(self.height, self.width, 3, &self.color)
    }

    pub fn flow_map(&self) -> FloatMap {
        FloatMap::from_f64(self.height, self.width, 2, &self.flow)
    }

    pub fn depth_map(&self) -> FloatMap {
        FloatMap::from_f64(self.height, self.width, 1, &self.depth)
    }

    pub fn alpha_map(&self) -> FloatMap {
        FloatMap::from_f64(self.height, self.width, 1, &self.alpha)
    }

    pub fn to_rgb8(&self) -> Rgb8 {
        Rgb8::from_unit(self.width, self.height, &self.color)
    }

    /// Writes `<stem>.ppm`, `<stem>.color`, `<stem>.flow`, `<stem>.depth` and `<stem>.alpha`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<()> {
        self.to_rgb8().write_ppm(&dir.join(format!("{stem}.ppm")))?;
        self.color_map().write(&dir.join(format!("{stem}.color")))?;
        self.flow_map().write(&dir.join(format!("{stem}.flow")))?;
        self.depth_map().write(&dir.join(format!("{stem}.depth")))?;
        self.alpha_map().write(&dir.join(format!("{stem}.alpha")))
    }
}
