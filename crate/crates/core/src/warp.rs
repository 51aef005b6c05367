//! Explicit forward warping of a reference image into a target view.
//!
//! The diffusion model makes this baseline obsolete where geometry is
//! sparse or occluded, but it stays in the toolbox as a diagnostic: with
//! unshaded synthetic rendering, warped colors must equal the target
//! render exactly on covisible pixels.

use crate::error::{Error, Result};
use crate::geom::{project_cam_point, Intrinsics, PointMap, Z_NEAR};
use crate::img::RgbImage;

/// Output of [`forward_warp`].
#[derive(Clone, Debug)]
pub struct Warped {
    pub image: RgbImage,
    /// True where at least one reference pixel splatted.
    pub coverage: Vec<bool>,
    /// Nearest splat depth per pixel; `INFINITY` where uncovered.
    pub zbuffer: Vec<f64>,
    /// Source pixel index that won each covered pixel.
    pub source: Vec<Option<usize>>,
}

/// Splats every valid reference pixel's color at its projection in the
/// target camera; nearest depth wins, with exact-tie resolution toward the
/// smaller source index so the result is splat-order invariant.
///
/// `x_r` must hold the reference geometry in the *target* frame.
pub fn forward_warp(i_r: &RgbImage, x_r: &PointMap, k_t: &Intrinsics) -> Result<Warped> {
    if i_r.width() != x_r.width() || i_r.height() != x_r.height() {
        return Err(Error::shape(
            "forward_warp",
            format!(
                "image {}x{} vs point map {}x{}",
                i_r.width(),
                i_r.height(),
                x_r.width(),
                x_r.height()
            ),
        ));
    }
    let (tw, th) = (k_t.width, k_t.height);
    let mut image = RgbImage::filled(tw, th, [0.0; 3]);
    let mut coverage = vec![false; tw * th];
    let mut zbuffer = vec![f64::INFINITY; tw * th];
    let mut source: Vec<Option<usize>> = vec![None; tw * th];
    for src_idx in x_r.valid_indices() {
        let proj = project_cam_point(k_t, x_r.points()[src_idx], Z_NEAR);
        if !proj.visible() {
            continue;
        }
        let (pi, pj) = proj.pixel();
        let t_idx = pj as usize * tw + pi as usize;
        let better = proj.depth < zbuffer[t_idx]
            || (proj.depth == zbuffer[t_idx]
                && source[t_idx].map(|s| src_idx < s).unwrap_or(true));
        if better {
            zbuffer[t_idx] = proj.depth;
            source[t_idx] = Some(src_idx);
            coverage[t_idx] = true;
            image.pixels_mut()[t_idx] = i_r.pixels()[src_idx];
        }
    }
    Ok(Warped { image, coverage, zbuffer, source })
}

/// Morphological dilation of a binary mask with a square structuring
/// element of odd side `kernel`. `kernel == 1` is the identity.
pub fn dilate_mask(mask: &[bool], width: usize, height: usize, kernel: usize) -> Result<Vec<bool>> {
    if mask.len() != width * height {
        return Err(Error::shape(
            "dilate_mask",
            format!("{}x{} vs {} entries", width, height, mask.len()),
        ));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "dilation kernel must be odd and >= 1, got {kernel}"
        )));
    }
    let r = (kernel / 2) as isize;
    let mut out = vec![false; mask.len()];
    for j in 0..height as isize {
        for i in 0..width as isize {
            let mut hit = false;
            'scan: for dj in -r..=r {
                for di in -r..=r {
                    let (y, x) = (j + dj, i + di);
                    if y >= 0 && x >= 0 && y < height as isize && x < width as isize {
                        if mask[y as usize * width + x as usize] {
                            hit = true;
                            break 'scan;
                        }
                    }
                }
            }
            out[j as usize * width + i as usize] = hit;
        }
    }
    Ok(out)
}
