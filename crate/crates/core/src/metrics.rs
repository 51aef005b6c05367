//! Image and depth evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::DepthMap;
use crate::img::RgbImage;

/// PSNR is capped here when the MSE falls below 1e-12 (identical inputs).
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`.
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "psnr",
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    let mut mse = 0.0;
    for (pa, pb) in a.pixels().iter().zip(b.pixels().iter()) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            mse += d * d;
        }
    }
    mse /= (a.pixels().len() * 3) as f64;
    if mse < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut w: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// averaged over the three channels. Windows are evaluated at fully
/// interior positions only.
pub fn ssim(a: &RgbImage, b: &RgbImage, window: usize, k1: f64, k2: f64) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            "ssim",
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    if a.width() < window || a.height() < window {
        return Err(Error::InvalidParameter(format!(
            "image {}x{} smaller than SSIM window {window}",
            a.width(),
            a.height()
        )));
    }
    let g = gaussian_window(window, 1.5);
    let (w, h) = (a.width(), a.height());
    let c1 = (k1 * 1.0f64).powi(2);
    let c2 = (k2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        for wy in 0..=(h - window) {
            for wx in 0..=(w - window) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dy in 0..window {
                    for dx in 0..window {
                        let weight = g[dy] * g[dx];
                        let va = a.get(wx + dx, wy + dy)[ch];
                        let vb = b.get(wx + dx, wy + dy)[ch];
                        mu_a += weight * va;
                        mu_b += weight * vb;
                        aa += weight * va * va;
                        bb += weight * vb * vb;
                        ab += weight * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Depth error triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    /// Mean of `|pred - ref| / ref`.
    pub absrel: f64,
    /// Root mean square error in meters.
    pub rmse: f64,
    /// Fraction of pixels with `max(pred/ref, ref/pred) < 1.25` (strict).
    pub delta1: f64,
}

/// Evaluates the depth metrics over pixels that are valid in both maps and
/// selected by `mask` (when given). Errors when no pixel qualifies.
pub fn depth_metrics(
    pred: &DepthMap,
    reference: &DepthMap,
    mask: Option<&[bool]>,
) -> Result<DepthMetrics> {
    if pred.width() != reference.width() || pred.height() != reference.height() {
        return Err(Error::shape(
            "depth_metrics",
            format!(
                "{}x{} vs {}x{}",
                pred.width(),
                pred.height(),
                reference.width(),
                reference.height()
            ),
        ));
    }
    let n = pred.data().len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::shape("depth_metrics", "mask size mismatch".to_string()));
        }
    }
    let mut absrel = 0.0;
    let mut sq = 0.0;
    let mut hits = 0usize;
    let mut count = 0usize;
    for idx in 0..n {
        let selected = mask.map(|m| m[idx]).unwrap_or(true);
        if !selected || !pred.mask()[idx] || !reference.mask()[idx] {
            continue;
        }
        let (p, r) = (pred.data()[idx], reference.data()[idx]);
        absrel += (p - r).abs() / r;
        sq += (p - r) * (p - r);
        let ratio = (p / r).max(r / p);
        if ratio < 1.25 {
            hits += 1;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidParameter("depth_metrics: empty evaluation mask".into()));
    }
    Ok(DepthMetrics {
        absrel: absrel / count as f64,
        rmse: (sq / count as f64).sqrt(),
        delta1: hits as f64 / count as f64,
    })
}

/// Evaluation report written by the eval pipeline. FID/KID need pretrained
/// feature extractors and stay `null`; external tools may fill them in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub absrel: Option<f64>,
    pub rmse: Option<f64>,
    pub delta1: Option<f64>,
    pub n_pixels: usize,
    pub fid: Option<f64>,
    pub kid: Option<f64>,
}
