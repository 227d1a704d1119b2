//! PSNR, SSIM and mask IoU.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) on the channel-mean
//! luminance with `C1 = 0.01²`, `C2 = 0.03²`. At the image border the window
//! is truncated and renormalized, so constant images give constant maps.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn window_weights() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable, border-renormalized Gaussian blur of a scalar field.
fn blur(src: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &wk) in w.iter().enumerate() {
                let xx = x as isize + k as isize - half;
                if xx >= 0 && (xx as usize) < width {
                    acc += wk * src[y * width + xx as usize];
                    norm += wk;
                }
            }
            tmp[y * width + x] = acc / norm;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &wk) in w.iter().enumerate() {
                let yy = y as isize + k as isize - half;
                if yy >= 0 && (yy as usize) < height {
                    acc += wk * tmp[yy as usize * width + x];
                    norm += wk;
                }
            }
            out[y * width + x] = acc / norm;
        }
    }
    out
}

/// Per-pixel SSIM between two images of equal shape.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Vec<f64>> {
    a.ensure_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let x = a.luminance();
    let y = b.luminance();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let win = window_weights();
    let mx = blur(&x, w, h, &win);
    let my = blur(&y, w, h, &win);
    let sxx = blur(&xx, w, h, &win);
    let syy = blur(&yy, w, h, &win);
    let sxy = blur(&xy, w, h, &win);
    Ok((0..w * h)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .collect())
}

pub fn ssim_mean(a: &Image, b: &Image) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// `10·log10(1/MSE)` over all pixels and channels; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = squared_error(a, b, None) / (3 * a.len()) as f64;
    Ok(psnr_from_mse(mse))
}

/// PSNR restricted to the pixels the mask keeps.
pub fn psnr_masked(a: &Image, b: &Image, keep: &Mask) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if keep.width() != a.width() || keep.height() != a.height() {
        return Err(Error::Shape("mask does not match image".into()));
    }
    let n = keep.count();
    if n == 0 {
        return Err(Error::Invalid("no pixels selected for PSNR".into()));
    }
    let mse = squared_error(a, b, Some(keep)) / (3 * n) as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub(crate) fn squared_error(a: &Image, b: &Image, keep: Option<&Mask>) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .enumerate()
        .filter(|(i, _)| keep.is_none_or(|m| m.bits()[*i]))
        .map(|(_, (p, q))| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum()
}

/// `|pred ∩ gt| / |pred ∪ gt|`, 1.0 when both are empty.
pub fn mask_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let union = pred.union_count(gt)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(pred.intersection_count(gt)? as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// `f64::INFINITY` marks identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub mask_iou: Option<f64>,
}

impl MetricReport {
    pub fn compute(pred: &Image, gt: &Image, masks: Option<(&Mask, &Mask)>) -> Result<Self> {
        Ok(Self {
            psnr: psnr(pred, gt)?,
            ssim: ssim_mean(pred, gt)?,
            mask_iou: masks.map(|(p, g)| mask_iou(p, g)).transpose()?,
        })
    }
}

pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}
