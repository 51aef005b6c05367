//! Point-map normalization and Fourier correspondence encoding.
//!
//! A reference/target pair is normalized by one shared affine map (valid
//! holding equal world points to equal coordinates in both maps), then each
//! coordinate axis is expanded into sine/cosine features. The expansion is
//! chosen so that the inner product of two encoded pixels has a closed
//! form:
//!
//! ```text
//! <enc(x1), enc(x2)> = sum_axes sum_j a_j^2 cos(2 pi F_j (x1 - x2))
//! ```
//!
//! which peaks exactly when the two pixels hold the same coordinates —
//! the correspondence signal the attention layers feed on.
//!
//! Channel order is axis-major, then frequency, then (cos, sin):
//! `x:F0:cos, x:F0:sin, x:F1:cos, ..., y:F0:cos, ...` — recorded here and
//! in checkpoint metadata.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointMap;

/// Frequencies and coefficients of the Fourier expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Fourier basis frequencies `F_j`.
    pub frequencies: Vec<f64>,
    /// Per-frequency coefficients `a_j`.
    pub coefficients: Vec<f64>,
}

impl Default for EncodingConfig {
    /// Frequencies 2^0..2^3 with unit coefficients: 24 output channels.
    fn default() -> Self {
        EncodingConfig {
            frequencies: vec![1.0, 2.0, 4.0, 8.0],
            coefficients: vec![1.0, 1.0, 1.0, 1.0],
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies.len() != self.coefficients.len() {
            return Err(Error::InvalidParameter(format!(
                "{} frequencies vs {} coefficients",
                self.frequencies.len(),
                self.coefficients.len()
            )));
        }
        if self.frequencies.is_empty() {
            return Err(Error::InvalidParameter("encoding needs at least one frequency".into()));
        }
        if self.frequencies.iter().any(|&f| f <= 0.0) || self.coefficients.iter().any(|&a| a <= 0.0)
        {
            return Err(Error::InvalidParameter(
                "frequencies and coefficients must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Output channels: 3 axes x 2 (cos, sin) x |F|.
    pub fn channels(&self) -> usize {
        6 * self.frequencies.len()
    }

    /// Squared norm of any valid encoded pixel: `3 * sum a_j^2`.
    pub fn encoded_sq_norm(&self) -> f64 {
        3.0 * self.coefficients.iter().map(|a| a * a).sum::<f64>()
    }

    /// Half-period of the highest frequency, `1 / (2 F_max)`: the per-axis
    /// coordinate difference beyond which kernel phases wrap and the
    /// kernel argmax may no longer agree with the Euclidean nearest
    /// neighbour.
    pub fn aliasing_radius(&self) -> f64 {
        let fmax = self.frequencies.iter().cloned().fold(f64::MIN, f64::max);
        1.0 / (2.0 * fmax)
    }
}

/// Shared affine normalization: `x -> (x - shift) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub shift: [f64; 3],
    pub scale: f64,
}

impl NormParams {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.shift[0]) * self.scale,
            (p[1] - self.shift[1]) * self.scale,
            (p[2] - self.shift[2]) * self.scale,
        ]
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] / self.scale + self.shift[0],
            p[1] / self.scale + self.shift[1],
            p[2] / self.scale + self.shift[2],
        ]
    }
}

fn apply_norm(map: &PointMap, params: &NormParams) -> PointMap {
    let points = map
        .points()
        .iter()
        .enumerate()
        .map(|(i, &p)| if map.is_valid(i) { params.apply(p) } else { [0.0; 3] })
        .collect();
    PointMap::new(map.width(), map.height(), points, map.mask().to_vec(), map.frame())
        .expect("shape preserved")
}

/// Jointly normalizes a group of maps sharing one frame into `[-1, 1]^3`
/// with one shared shift (the valid-point centroid over all maps) and one
/// shared scale (reciprocal of the largest per-axis absolute deviation).
/// Sharing the affine map is what keeps equal world points equal after
/// normalization.
pub fn normalize_jointly(maps: &[&PointMap]) -> Result<(Vec<PointMap>, NormParams)> {
    let first = maps.first().ok_or(Error::DegeneratePoints)?;
    for m in maps {
        m.expect_frame(first.frame())?;
    }
    let mut centroid = [0.0f64; 3];
    let mut count = 0usize;
    for map in maps {
        for idx in map.valid_indices() {
            let p = map.points()[idx];
            for a in 0..3 {
                centroid[a] += p[a];
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegeneratePoints);
    }
    for c in &mut centroid {
        *c /= count as f64;
    }
    let mut max_dev = 0.0f64;
    for map in maps {
        for idx in map.valid_indices() {
            let p = map.points()[idx];
            for a in 0..3 {
                max_dev = max_dev.max((p[a] - centroid[a]).abs());
            }
        }
    }
    if max_dev == 0.0 {
        return Err(Error::DegeneratePoints);
    }
    let params = NormParams { shift: centroid, scale: 1.0 / max_dev };
    Ok((maps.iter().map(|m| apply_norm(m, &params)).collect(), params))
}

/// Two-map convenience wrapper over [`normalize_jointly`] for the usual
/// reference/target pair.
pub fn normalize_pair(
    x_ref: &PointMap,
    x_tgt: &PointMap,
) -> Result<(PointMap, PointMap, NormParams)> {
    let (mut maps, params) = normalize_jointly(&[x_ref, x_tgt])?;
    let tgt = maps.pop().expect("two maps in, two out");
    let reference = maps.pop().expect("two maps in, two out");
    Ok((reference, tgt, params))
}

/// Fourier-encoded point map. Invalid pixels are exactly all-zero vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMap {
    width: usize,
    height: usize,
    channels: usize,
    /// Pixel-major layout: `data[idx * channels + c]`.
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl EncodedMap {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn mask(&self) -> &[bool] {
        &self.valid
    }
    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Encoded vector of one pixel (linear index).
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    /// Repacks into channel-major `[c, h, w]` data for the network input.
    pub fn to_chw(&self) -> Vec<f64> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0; w * h * c];
        for idx in 0..w * h {
            for ch in 0..c {
                out[ch * w * h + idx] = self.data[idx * c + ch];
            }
        }
        out
    }
}

/// Encodes a normalized point map. Valid coordinates are expected in
/// `[-1, 1]`; exceeding that by more than 1e-6 logs a warning (the
/// encoding itself still evaluates).
pub fn fourier_encode(x: &PointMap, cfg: &EncodingConfig) -> Result<EncodedMap> {
    cfg.validate()?;
    let channels = cfg.channels();
    let nf = cfg.frequencies.len();
    let n = x.points().len();
    let mut data = vec![0.0f64; n * channels];
    let mut out_of_range = 0usize;
    for idx in 0..n {
        if !x.is_valid(idx) {
            continue; // stays exactly zero
        }
        let p = x.points()[idx];
        let row = &mut data[idx * channels..(idx + 1) * channels];
        for (axis, &coord) in p.iter().enumerate() {
            if coord.abs() > 1.0 + 1e-6 {
                out_of_range += 1;
            }
            for j in 0..nf {
                let phase = 2.0 * std::f64::consts::PI * cfg.frequencies[j] * coord;
                let base = (axis * nf + j) * 2;
                row[base] = cfg.coefficients[j] * phase.cos();
                row[base + 1] = cfg.coefficients[j] * phase.sin();
            }
        }
    }
    if out_of_range > 0 {
        log::warn!("fourier_encode: {out_of_range} coordinates outside [-1, 1]");
    }
    Ok(EncodedMap {
        width: x.width(),
        height: x.height(),
        channels,
        data,
        valid: x.mask().to_vec(),
    })
}

/// Inner product of two encoded pixel vectors.
pub fn kernel_eval(x1: &[f64], x2: &[f64], cfg: &EncodingConfig) -> Result<f64> {
    if x1.len() != x2.len() || x1.len() != cfg.channels() {
        return Err(Error::shape(
            "kernel_eval",
            format!("{} vs {} (config wants {})", x1.len(), x2.len(), cfg.channels()),
        ));
    }
    Ok(x1.iter().zip(x2.iter()).map(|(a, b)| a * b).sum())
}

/// Closed form the encoding realizes:
/// `sum_axes sum_j a_j^2 cos(2 pi F_j (p1 - p2))`.
pub fn kernel_closed_form(p1: [f64; 3], p2: [f64; 3], cfg: &EncodingConfig) -> f64 {
    let mut acc = 0.0;
    for axis in 0..3 {
        let d = p1[axis] - p2[axis];
        for (f, a) in cfg.frequencies.iter().zip(cfg.coefficients.iter()) {
            acc += a * a * (2.0 * std::f64::consts::PI * f * d).cos();
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::FrameId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_of(points: Vec<[f64; 3]>, frame: FrameId) -> PointMap {
        let n = points.len();
        PointMap::new(n, 1, points, vec![true; n], frame).unwrap()
    }

    #[test]
    fn default_config_has_24_channels() {
        let cfg = EncodingConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.channels(), 24);
        assert_eq!(cfg.frequencies, vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn origin_encodes_to_unit_cos_zero_sin() {
        let cfg = EncodingConfig::default();
        let m = map_of(vec![[0.0, 0.0, 0.0]], FrameId(0));
        let enc = fourier_encode(&m, &cfg).unwrap();
        assert_eq!(enc.channels(), 24);
        for (c, &v) in enc.pixel(0).iter().enumerate() {
            if c % 2 == 0 {
                assert_eq!(v, 1.0, "cos slot {c}");
            } else {
                assert_eq!(v, 0.0, "sin slot {c}");
            }
        }
    }

    #[test]
    fn invalid_pixel_encodes_to_zeros() {
        let cfg = EncodingConfig::default();
        let m = PointMap::new(2, 1, vec![[0.5, 0.5, 0.5], [0.0; 3]], vec![true, false], FrameId(0))
            .unwrap();
        let enc = fourier_encode(&m, &cfg).unwrap();
        assert!(enc.pixel(1).iter().all(|&v| v == 0.0));
        assert_eq!(enc.pixel(1).len(), 24);
    }

    #[test]
    fn quarter_period_single_frequency() {
        // x = 0.25, F = {1}: cos(pi/2) = 0, sin(pi/2) = 1.
        let cfg = EncodingConfig { frequencies: vec![1.0], coefficients: vec![1.0] };
        let m = map_of(vec![[0.25, 0.0, 0.0]], FrameId(0));
        let enc = fourier_encode(&m, &cfg).unwrap();
        let px = enc.pixel(0);
        assert!(px[0].abs() < 1e-15, "x cos slot");
        assert!((px[1] - 1.0).abs() < 1e-15, "x sin slot");
    }

    #[test]
    fn kernel_self_value_is_12_with_defaults() {
        let cfg = EncodingConfig::default();
        let m = map_of(vec![[0.3, -0.7, 0.1]], FrameId(0));
        let enc = fourier_encode(&m, &cfg).unwrap();
        let k = kernel_eval(enc.pixel(0), enc.pixel(0), &cfg).unwrap();
        assert!((k - 12.0).abs() < 1e-9);
        assert_eq!(cfg.encoded_sq_norm(), 12.0);
    }

    #[test]
    fn kernel_against_zero_vector_is_zero() {
        let cfg = EncodingConfig::default();
        let m = PointMap::new(2, 1, vec![[0.2, 0.4, -0.6], [0.0; 3]], vec![true, false], FrameId(0))
            .unwrap();
        let enc = fourier_encode(&m, &cfg).unwrap();
        let k = kernel_eval(enc.pixel(0), enc.pixel(1), &cfg).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn kernel_matches_closed_form_on_random_pairs() {
        let cfg = EncodingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..2000 {
            let p1 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let p2 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let m = map_of(vec![p1, p2], FrameId(0));
            let enc = fourier_encode(&m, &cfg).unwrap();
            let dot = kernel_eval(enc.pixel(0), enc.pixel(1), &cfg).unwrap();
            let closed = kernel_closed_form(p1, p2, &cfg);
            assert!((dot - closed).abs() < 1e-9, "dot {dot} vs closed {closed}");
        }
    }

    #[test]
    fn kernel_is_shift_invariant() {
        let cfg = EncodingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..500 {
            let p1 = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let p2 = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let c = [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)];
            let shifted1 = [p1[0] + c[0], p1[1] + c[1], p1[2] + c[2]];
            let shifted2 = [p2[0] + c[0], p2[1] + c[1], p2[2] + c[2]];
            let m = map_of(vec![p1, p2, shifted1, shifted2], FrameId(0));
            let enc = fourier_encode(&m, &cfg).unwrap();
            let k0 = kernel_eval(enc.pixel(0), enc.pixel(1), &cfg).unwrap();
            let k1 = kernel_eval(enc.pixel(2), enc.pixel(3), &cfg).unwrap();
            assert!((k0 - k1).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_peaks_at_identity() {
        let cfg = EncodingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..500 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let m = map_of(vec![x, y], FrameId(0));
            let enc = fourier_encode(&m, &cfg).unwrap();
            let kxx = kernel_eval(enc.pixel(0), enc.pixel(0), &cfg).unwrap();
            let kxy = kernel_eval(enc.pixel(0), enc.pixel(1), &cfg).unwrap();
            assert!(kxx >= kxy - 1e-12);
        }
    }

    #[test]
    fn encoded_norm_is_sqrt_3_sum_a_sq() {
        let cfg = EncodingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..200 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let m = map_of(vec![p], FrameId(0));
            let enc = fourier_encode(&m, &cfg).unwrap();
            let norm: f64 = enc.pixel(0).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - cfg.encoded_sq_norm().sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_identity_when_already_unit() {
        // Points spanning exactly [-1,1]^3 with zero centroid stay put.
        let pts = vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let m = map_of(pts.clone(), FrameId(1));
        let (a, b, params) = normalize_pair(&m, &m).unwrap();
        assert_eq!(params.scale, 1.0);
        assert_eq!(params.shift, [0.0; 3]);
        assert_eq!(a.points(), m.points());
        assert_eq!(b.points(), m.points());
    }

    #[test]
    fn normalize_removes_centroid_and_rescales() {
        // Cluster at (10, 10, 10) +- 2: centroid removed, max |coord| = 1.
        let pts = vec![[8.0, 10.0, 10.0], [12.0, 10.0, 10.0], [10.0, 12.0, 8.0]];
        let m = map_of(pts, FrameId(1));
        let (a, _, params) = normalize_pair(&m, &m).unwrap();
        // Recompute the oracle directly.
        let centroid = [10.0, 32.0 / 3.0, 28.0 / 3.0];
        for (got, expect) in params.shift.iter().zip(centroid.iter()) {
            assert!((got - expect).abs() < 1e-12);
        }
        let max_coord = a
            .points()
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        assert!((max_coord - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_shared_between_maps() {
        // A world point visible in both maps normalizes identically.
        let shared = [3.0, -2.0, 7.5];
        let ref_pts = vec![shared, [1.0, 0.0, 5.0]];
        let tgt_pts = vec![[4.0, 1.0, 9.0], shared];
        let r = map_of(ref_pts, FrameId(2));
        let t = map_of(tgt_pts, FrameId(2));
        let (rn, tn, _) = normalize_pair(&r, &t).unwrap();
        for c in 0..3 {
            assert!((rn.points()[0][c] - tn.points()[1][c]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_degenerate_errors() {
        let m = map_of(vec![[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]], FrameId(0));
        assert!(matches!(normalize_pair(&m, &m), Err(Error::DegeneratePoints)));
    }

    #[test]
    fn kernel_dimension_mismatch_errors() {
        let cfg = EncodingConfig::default();
        assert!(kernel_eval(&[0.0; 24], &[0.0; 12], &cfg).is_err());
        assert!(kernel_eval(&[0.0; 12], &[0.0; 12], &cfg).is_err());
    }
}
