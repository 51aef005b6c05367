//! File formats, bit-exact by contract:
//!
//! - **PPM** P6, maxval 255, for RGB images;
//! - **PFM** `PF` (3-channel) / `Pf` (1-channel), little-endian (negative
//!   scale), bottom-to-top row order, for depth maps, point maps, masks
//!   and z-buffers;
//! - **PMLS** LiDAR scans: magic `PMLS`, u64 LE point count, then xyz as
//!   32-bit LE floats;
//! - **PMDK** parameter checkpoints: magic `PMDK`, u32 LE format version,
//!   u64 LE tensor count, then per tensor a u64 LE name length, UTF-8
//!   name, u64 LE rank, u64 LE dims, and raw 64-bit LE floats. A config
//!   JSON may ride along as a byte-per-float tensor named
//!   `__config_json__`;
//! - camera JSON `{fx, fy, cx, cy, width, height, pose: [16 row-major
//!   floats, camera-to-world]}`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{CameraView, Intrinsics, LidarScan, Pose};
use crate::img::RgbImage;
use crate::tensor::{ParamStore, Scalar, Tensor};

/// Current PMDK checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

const CONFIG_TENSOR: &str = "__config_json__";

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), detail: detail.into() }
}

// --- PPM ---------------------------------------------------------------

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height())?;
    let mut buf = Vec::with_capacity(image.pixels().len() * 3);
    for px in image.pixels() {
        for c in 0..3 {
            buf.push((px[c].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0usize;
    // Header: three whitespace-separated fields after the magic.
    if !bytes.starts_with(b"P6") {
        return Err(format_err(path, "not a P6 PPM"));
    }
    pos += 2;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| format_err(path, "bad header"))?
                .parse::<usize>()
                .map_err(|_| format_err(path, "bad header number"))?,
        );
    }
    pos += 1; // single whitespace after maxval
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    if bytes.len() < pos + w * h * 3 {
        return Err(format_err(path, "truncated pixel data"));
    }
    let pixels = (0..w * h)
        .map(|i| {
            let o = pos + i * 3;
            [
                bytes[o] as f64 / 255.0,
                bytes[o + 1] as f64 / 255.0,
                bytes[o + 2] as f64 / 255.0,
            ]
        })
        .collect();
    RgbImage::new(w, h, pixels)
}

// --- PFM ---------------------------------------------------------------

/// Planar float image: 1 or 3 channels, row-major top-to-bottom in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Interleaved per pixel: `data[(j*w + i)*channels + c]`, top-to-bottom.
    pub data: Vec<f32>,
}

pub fn write_pfm(path: &Path, img: &PfmImage) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::InvalidParameter(format!("PFM supports 1 or 3 channels, got {}", img.channels)));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    // Negative scale marks little-endian data.
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width, img.height)?;
    // PFM rows run bottom-to-top.
    for j in (0..img.height).rev() {
        for i in 0..img.width {
            for c in 0..img.channels {
                let v = img.data[(j * img.width + i) * img.channels + c];
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut read_token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| format_err(path, "bad PFM header"))?
            .to_string())
    };
    let magic = read_token()?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format_err(path, format!("bad PFM magic {other}"))),
    };
    let w: usize = read_token()?.parse().map_err(|_| format_err(path, "bad width"))?;
    let h: usize = read_token()?.parse().map_err(|_| format_err(path, "bad height"))?;
    let scale: f64 = read_token()?.parse().map_err(|_| format_err(path, "bad scale"))?;
    if scale >= 0.0 {
        return Err(format_err(path, "big-endian PFM not supported"));
    }
    pos += 1; // single whitespace after scale
    let need = w * h * channels * 4;
    if bytes.len() < pos + need {
        return Err(format_err(path, "truncated PFM data"));
    }
    let mut data = vec![0f32; w * h * channels];
    let mut off = pos;
    for j in (0..h).rev() {
        for i in 0..w {
            for c in 0..channels {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                data[(j * w + i) * channels + c] = v;
                off += 4;
            }
        }
    }
    Ok(PfmImage { width: w, height: h, channels, data })
}

// --- PMLS --------------------------------------------------------------

pub fn write_pmls(path: &Path, scan: &LidarScan) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(b"PMLS")?;
    out.write_all(&(scan.len() as u64).to_le_bytes())?;
    for p in &scan.points {
        for c in 0..3 {
            out.write_all(&(p[c] as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pmls(path: &Path) -> Result<LidarScan> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != b"PMLS" {
        return Err(format_err(path, "bad PMLS magic"));
    }
    let mut cnt = [0u8; 8];
    file.read_exact(&mut cnt)?;
    let count = u64::from_le_bytes(cnt) as usize;
    let mut buf = vec![0u8; count * 12];
    file.read_exact(&mut buf)?;
    let points = (0..count)
        .map(|i| {
            let o = i * 12;
            [
                f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as f64,
                f32::from_le_bytes(buf[o + 4..o + 8].try_into().unwrap()) as f64,
                f32::from_le_bytes(buf[o + 8..o + 12].try_into().unwrap()) as f64,
            ]
        })
        .collect();
    LidarScan::new(points)
}

// --- PMDK checkpoints ----------------------------------------------------

/// Serializes a parameter store (and optional config JSON). Tensors are
/// written in store order, always as f64.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    config_json: Option<&str>,
) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(b"PMDK")?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let extra = usize::from(config_json.is_some());
    out.write_all(&((store.len() + extra) as u64).to_le_bytes())?;
    let write_tensor = |out: &mut BufWriter<fs::File>, name: &str, shape: &[usize], data: &[f64]| -> Result<()> {
        out.write_all(&(name.len() as u64).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(shape.len() as u64).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    if let Some(json) = config_json {
        let data: Vec<f64> = json.bytes().map(|b| b as f64).collect();
        write_tensor(&mut out, CONFIG_TENSOR, &[data.len()], &data)?;
    }
    for (name, tensor, _) in store.iter() {
        write_tensor(&mut out, name, tensor.shape(), &tensor.to_f64_vec())?;
    }
    Ok(())
}

/// Loads a PMDK checkpoint. All parameters come back non-trainable; the
/// model re-applies its trainable predicate.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ParamStore<T>, Option<String>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != b"PMDK" {
        return Err(format_err(path, "bad PMDK magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            path: path.display().to_string(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut pos = 16usize;
    let mut store = ParamStore::new();
    let mut config = None;
    let take = |n: usize, pos: &mut usize| -> Result<std::ops::Range<usize>> {
        if bytes.len() < *pos + n {
            return Err(format_err(path, "truncated checkpoint"));
        }
        let r = *pos..*pos + n;
        *pos += n;
        Ok(r)
    };
    for _ in 0..count {
        let r = take(8, &mut pos)?;
        let name_len = u64::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
        let r = take(name_len, &mut pos)?;
        let name = std::str::from_utf8(&bytes[r])
            .map_err(|_| format_err(path, "bad tensor name"))?
            .to_string();
        let r = take(8, &mut pos)?;
        let rank = u64::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let r = take(8, &mut pos)?;
            shape.push(u64::from_le_bytes(bytes[r].try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let r = take(n * 8, &mut pos)?;
        let data: Vec<f64> = bytes[r]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if name == CONFIG_TENSOR {
            let text: String = data.iter().map(|&b| b as u8 as char).collect();
            config = Some(text);
        } else {
            let t64 = Tensor::<f64>::from_vec(&shape, data);
            store.insert(name, t64.cast::<T>(), false);
        }
    }
    Ok((store, config))
}

/// SHA-256 hex digest of a byte slice (manifests, artifact provenance).
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Order-sensitive digest of a parameter store: name, shape and f64 bits
/// of every entry. Used to prove the frozen base never moved.
pub fn param_store_hash<T: Scalar>(store: &ParamStore<T>) -> String {
    let mut hasher = Sha256::new();
    for (name, tensor, _) in store.iter() {
        hasher.update(name.as_bytes());
        for &d in tensor.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            hasher.update(v.to_f64().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// --- Camera JSON ---------------------------------------------------------

/// On-disk camera description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4x4 camera-to-world matrix.
    pub pose: Vec<f64>,
}

impl CameraFile {
    pub fn from_view(view: &CameraView) -> Self {
        CameraFile {
            fx: view.intrinsics.fx,
            fy: view.intrinsics.fy,
            cx: view.intrinsics.cx,
            cy: view.intrinsics.cy,
            width: view.intrinsics.width,
            height: view.intrinsics.height,
            pose: view.pose.matrix().to_vec(),
        }
    }

    pub fn to_view(&self) -> Result<CameraView> {
        if self.pose.len() != 16 {
            return Err(Error::InvalidParameter(format!(
                "camera pose must have 16 entries, got {}",
                self.pose.len()
            )));
        }
        let mut m = [0.0; 16];
        m.copy_from_slice(&self.pose);
        Ok(CameraView::new(
            Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?,
            Pose::from_matrix(m)?,
        ))
    }
}

pub fn write_camera_json(path: &Path, view: &CameraView) -> Result<()> {
    let text = serde_json::to_string_pretty(&CameraFile::from_view(view))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_camera_json(path: &Path) -> Result<CameraView> {
    let text = fs::read_to_string(path)?;
    let file: CameraFile = serde_json::from_str(&text)?;
    file.to_view()
}

// --- Conversions ----------------------------------------------------------

use crate::geom::{DepthMap, FrameId, PointMap};

/// Depth map to 1-channel PFM; invalid pixels become 0.
pub fn depth_to_pfm(d: &DepthMap) -> PfmImage {
    PfmImage {
        width: d.width(),
        height: d.height(),
        channels: 1,
        data: d.data().iter().map(|&v| v as f32).collect(),
    }
}

pub fn depth_from_pfm(p: &PfmImage) -> Result<DepthMap> {
    if p.channels != 1 {
        return Err(Error::InvalidParameter("depth PFM must be 1-channel".into()));
    }
    let data: Vec<f64> = p.data.iter().map(|&v| v as f64).collect();
    let valid: Vec<bool> = data.iter().map(|&v| v > 0.0 && v.is_finite()).collect();
    DepthMap::new(p.width, p.height, data, valid)
}

/// Point map to 3-channel PFM; the mask is implied by the all-zero
/// sentinel (exactly (0,0,0) never occurs for a valid camera-frame point,
/// which always has z > 0).
pub fn pointmap_to_pfm(x: &PointMap) -> PfmImage {
    let mut data = vec![0f32; x.points().len() * 3];
    for (i, p) in x.points().iter().enumerate() {
        for c in 0..3 {
            data[i * 3 + c] = p[c] as f32;
        }
    }
    PfmImage { width: x.width(), height: x.height(), channels: 3, data }
}

pub fn pointmap_from_pfm(p: &PfmImage, frame: FrameId) -> Result<PointMap> {
    if p.channels != 3 {
        return Err(Error::InvalidParameter("point-map PFM must be 3-channel".into()));
    }
    let n = p.width * p.height;
    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let pt = [p.data[i * 3] as f64, p.data[i * 3 + 1] as f64, p.data[i * 3 + 2] as f64];
        valid.push(pt != [0.0, 0.0, 0.0]);
        points.push(pt);
    }
    PointMap::new(p.width, p.height, points, valid, frame)
}

/// Binary mask to 1-channel PFM of 0/1 floats.
pub fn mask_to_pfm(mask: &[bool], width: usize, height: usize) -> PfmImage {
    PfmImage {
        width,
        height,
        channels: 1,
        data: mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn ppm_round_trip_is_exact_on_quantized_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let pixels: Vec<[f64; 3]> = (0..12 * 8)
            .map(|_| {
                [
                    (rng.gen_range(0u16..256) as f64) / 255.0,
                    (rng.gen_range(0u16..256) as f64) / 255.0,
                    (rng.gen_range(0u16..256) as f64) / 255.0,
                ]
            })
            .collect();
        let img = RgbImage::new(12, 8, pixels).unwrap();
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pfm_round_trip_both_channel_counts() {
        let dir = tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for channels in [1usize, 3] {
            let path = dir.path().join(format!("t{channels}.pfm"));
            let img = PfmImage {
                width: 7,
                height: 5,
                channels,
                data: (0..7 * 5 * channels).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            };
            write_pfm(&path, &img).unwrap();
            assert_eq!(read_pfm(&path).unwrap(), img);
        }
    }

    #[test]
    fn pmls_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scan.pmls");
        let scan = LidarScan::new(vec![[1.0, -2.5, 3.25], [0.0, 0.5, 9.0]]).unwrap();
        write_pmls(&path, &scan).unwrap();
        let back = read_pmls(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in scan.points.iter().zip(back.points.iter()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-6); // stored as f32
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_with_config() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.pmdk");
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut store = ParamStore::<f64>::new();
        store.insert("a.w", Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng), true);
        store.insert("b.g", Tensor::rand_uniform(&[7], -1.0, 1.0, &mut rng), false);
        save_checkpoint(&path, &store, Some("{\"width\":48}")).unwrap();
        let (loaded, config) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(config.as_deref(), Some("{\"width\":48}"));
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("a.w").data(), store.get("a.w").data());
        assert_eq!(loaded.get("b.g").shape(), &[7]);
        // Same content hashes identically; loaded flags are non-trainable.
        assert!(!loaded.is_trainable("a.w"));
        assert_eq!(param_store_hash(&store), param_store_hash(&loaded));
    }

    #[test]
    fn checkpoint_version_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pmdk");
        let store = ParamStore::<f64>::new();
        save_checkpoint(&path, &store, None).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 99; // bump version
        fs::write(&path, bytes).unwrap();
        match load_checkpoint::<f64>(&path) {
            Err(Error::CheckpointVersion { found: 99, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn camera_json_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cam.json");
        let view = CameraView::new(
            Intrinsics::new(40.0, 42.0, 23.5, 15.5, 48, 32).unwrap(),
            Pose::rotation_y(0.3).compose(&Pose::from_translation([1.0, 2.0, 3.0])),
        );
        write_camera_json(&path, &view).unwrap();
        let back = read_camera_json(&path).unwrap();
        assert_eq!(view.intrinsics, back.intrinsics);
        for (a, b) in view.pose.matrix().iter().zip(back.pose.matrix().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_and_pointmap_pfm_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let data: Vec<f64> = (0..6 * 4).map(|_| (rng.gen_range(0.5..8.0f64) * 1024.0).round() / 1024.0).collect();
        let mut valid = vec![true; 24];
        valid[5] = false;
        let d = DepthMap::new(6, 4, data, valid).unwrap();
        let back = depth_from_pfm(&depth_to_pfm(&d)).unwrap();
        assert_eq!(back.mask(), d.mask());
        for (a, b) in d.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }

        let k = Intrinsics::new(8.0, 8.0, 3.0, 2.0, 6, 4).unwrap();
        let pm = crate::geom::pointmap_from_depth(&k, &d, FrameId(2)).unwrap();
        let back = pointmap_from_pfm(&pointmap_to_pfm(&pm), FrameId(2)).unwrap();
        assert_eq!(back.mask(), pm.mask());
    }
}
