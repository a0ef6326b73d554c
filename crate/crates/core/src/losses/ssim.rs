use crate::error::{Error, Result};

/// Gaussian-window SSIM over the valid region (windows fully inside the
/// image), averaged over positions and channels. Data range is 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

fn kernel(cfg: &SsimConfig) -> Vec<f64> {
    let c = (cfg.window / 2) as f64;
    let k: Vec<f64> = (0..cfg.window)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * cfg.sigma * cfg.sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of one channel: output is `(h − k + 1) × (w − k + 1)`.
fn filter(img: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (width + 1 - n, height + 1 - n);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`]: scatters a valid-region map back to full size.
fn filter_adjoint(g: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (width + 1 - n, height + 1 - n);
    let mut rows = vec![0.0; ow * height];
    for y in 0..oh {
        for x in 0..ow {
            for i in 0..n {
                rows[(y + i) * ow + x] += k[i] * g[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..ow {
            for i in 0..n {
                out[y * width + x + i] += k[i] * rows[y * ow + x];
            }
        }
    }
    out
}

fn channel(img: &[f64], c: usize, channels: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(channels).copied().collect()
}

fn check(a: &[f64], b: &[f64], width: usize, height: usize, channels: usize, cfg: &SsimConfig) -> Result<()> {
    if a.len() != width * height * channels || b.len() != a.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{height}×{width}×{channels}"),
            actual: format!("{} and {} values", a.len(), b.len()),
        });
    }
    if width < cfg.window || height < cfg.window {
        return Err(Error::Config(format!(
            "image {width}×{height} smaller than the {}-pixel SSIM window",
            cfg.window
        )));
    }
    Ok(())
}

fn ssim_impl(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    check(x, y, width, height, channels, cfg)?;
    let k = kernel(cfg);
    let c1 = (cfg.k1).powi(2);
    let c2 = (cfg.k2).powi(2);
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; x.len()] } else { Vec::new() };
    let valid = (width + 1 - cfg.window) * (height + 1 - cfg.window);
    let norm = 1.0 / (valid * channels) as f64;
    for c in 0..channels {
        let xc = channel(x, c, channels);
        let yc = channel(y, c, channels);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let mx = filter(&xc, width, height, &k);
        let my = filter(&yc, width, height, &k);
        let mxx = filter(&sq(&xc, &xc), width, height, &k);
        let myy = filter(&sq(&yc, &yc), width, height, &k);
        let mxy = filter(&sq(&xc, &yc), width, height, &k);
        let mut g_mu = vec![0.0; valid];
        let mut g_xx = vec![0.0; valid];
        let mut g_xy = vec![0.0; valid];
        for p in 0..valid {
            let (ux, uy) = (mx[p], my[p]);
            let vx = mxx[p] - ux * ux;
            let vy = myy[p] - uy * uy;
            let cxy = mxy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + c1;
            let a2 = 2.0 * cxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = vx + vy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_dux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
                let ds_dvx = -s / b2;
                let ds_dcxy = 2.0 * a1 / (b1 * b2);
                // vx = E[x²] − ux², cxy = E[xy] − ux·uy
                g_mu[p] = (ds_dux - 2.0 * ds_dvx * ux - ds_dcxy * uy) * norm;
                g_xx[p] = ds_dvx * norm;
                g_xy[p] = ds_dcxy * norm;
            }
        }
        if want_grad {
            let a = filter_adjoint(&g_mu, width, height, &k);
            let b = filter_adjoint(&g_xx, width, height, &k);
            let d = filter_adjoint(&g_xy, width, height, &k);
            for i in 0..width * height {
                grad[i * channels + c] = a[i] + 2.0 * xc[i] * b[i] + yc[i] * d[i];
            }
        }
    }
    Ok((total * norm, grad))
}

/// Mean SSIM of `x` against `y` (interleaved channels).
pub fn ssim(x: &[f64], y: &[f64], width: usize, height: usize, channels: usize, cfg: &SsimConfig) -> Result<f64> {
    ssim_impl(x, y, width, height, channels, cfg, false).map(|(s, _)| s)
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    cfg: &SsimConfig,
) -> Result<(f64, Vec<f64>)> {
    ssim_impl(x, y, width, height, channels, cfg, true)
}
