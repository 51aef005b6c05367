//! Small RGB image buffer shared by the renderer, warper and metrics.

use crate::error::{Error, Result};

/// Row-major RGB image; channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(
                "RgbImage::new",
                format!("{}x{} vs {} pixels", width, height, pixels.len()),
            ));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        RgbImage { width, height, pixels: vec![color; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }
    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.pixels
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        self.pixels[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, c: [f64; 3]) {
        self.pixels[j * self.width + i] = c;
    }

    /// Planar `[3, h, w]` data with values mapped from `[0,1]` to `[-1,1]`
    /// — the network's input range.
    pub fn to_signed_chw(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (idx, px) in self.pixels.iter().enumerate() {
            for c in 0..3 {
                out[c * n + idx] = px[c] * 2.0 - 1.0;
            }
        }
        out
    }

    /// Inverse of [`Self::to_signed_chw`], clamping back into `[0,1]`.
    pub fn from_signed_chw(width: usize, height: usize, data: &[f64]) -> Result<Self> {
        let n = width * height;
        if data.len() != 3 * n {
            return Err(Error::shape(
                "RgbImage::from_signed_chw",
                format!("expected {} values, got {}", 3 * n, data.len()),
            ));
        }
        let pixels = (0..n)
            .map(|idx| {
                let mut px = [0.0; 3];
                for c in 0..3 {
                    px[c] = ((data[c * n + idx] + 1.0) / 2.0).clamp(0.0, 1.0);
                }
                px
            })
            .collect();
        RgbImage::new(width, height, pixels)
    }

    /// Maximum absolute channel difference.
    pub fn max_abs_diff(&self, other: &RgbImage) -> f64 {
        self.pixels
            .iter()
            .zip(other.pixels.iter())
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RgbImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape(
                "RgbImage::crop",
                format!("{w}x{h}+{x0}+{y0} exceeds {}x{}", self.width, self.height),
            ));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for j in 0..h {
            for i in 0..w {
                pixels.push(self.get(x0 + i, y0 + j));
            }
        }
        RgbImage::new(w, h, pixels)
    }
}
