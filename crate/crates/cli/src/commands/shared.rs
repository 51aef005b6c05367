//! Bits shared by several commands: config-file overrides, checkpoint
//! metadata, condition assembly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pmdk::dataset::{build_pair, GeometrySource, ScenePair, ViewRecord};
use pmdk::diffusion::{Condition, ModelConfig};
use pmdk::encode::{fourier_encode, normalize_jointly, EncodingConfig};
use pmdk::geom::PointMap;
use pmdk::img::RgbImage;
use pmdk::tensor::Tensor;

/// Loads a `--config` JSON into the command's config type; missing file
/// path means all defaults.
pub fn load_config<C: DeserializeOwned + Default>(path: &Option<PathBuf>) -> anyhow::Result<C> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(C::default()),
    }
}

/// Flag-over-config resolution: the explicit flag wins.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Metadata embedded in every checkpoint.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub encoding: EncodingConfig,
    /// "base" or "conditional".
    pub phase: String,
}

pub fn read_checkpoint_meta(config_json: &Option<String>, path: &Path) -> anyhow::Result<CheckpointMeta> {
    let Some(json) = config_json else {
        bail!("checkpoint {} carries no embedded config", path.display());
    };
    Ok(serde_json::from_str(json)?)
}

/// Provenance JSON written next to every generated artifact.
#[derive(Serialize, Deserialize, Debug)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub steps: Option<usize>,
    pub noise_scale: Option<f64>,
    pub checkpoint: Option<String>,
    pub condition: serde_json::Value,
    pub output_sha256: String,
}

pub fn write_provenance(out: &Path, p: &Provenance) -> anyhow::Result<()> {
    let sidecar = out.with_extension(format!(
        "{}provenance.json",
        out.extension().map(|e| format!("{}.", e.to_string_lossy())).unwrap_or_default()
    ));
    fs::write(sidecar, serde_json::to_string_pretty(p)?)?;
    Ok(())
}

/// Builds the sampler condition for one target view conditioned on one or
/// more reference views. All maps (every reference plus the target) are
/// normalized by one shared affine transform before encoding.
pub fn build_condition(
    views: &[ViewRecord],
    reference_indices: &[usize],
    target_index: usize,
    source: GeometrySource,
    encoding: &EncodingConfig,
) -> anyhow::Result<(Condition<f32>, ScenePair)> {
    if reference_indices.is_empty() {
        bail!("need at least one --reference");
    }
    for &r in reference_indices.iter().chain([target_index].iter()) {
        if r >= views.len() {
            bail!("view index {r} out of range (dataset has {})", views.len());
        }
    }
    let pairs: Vec<ScenePair> = reference_indices
        .iter()
        .map(|&r| build_pair(&views[r], &views[target_index], source))
        .collect::<pmdk::Result<_>>()?;

    // Joint normalization across all reference maps and the target map.
    let mut map_refs: Vec<&PointMap> = pairs.iter().map(|p| &p.x_ref_t).collect();
    map_refs.push(&pairs[0].x_tgt_t);
    let (mut normalized, _params) = normalize_jointly(&map_refs)?;
    let norm_tgt = normalized.pop().expect("target map present");

    let (w, h) = (views[target_index].image.width(), views[target_index].image.height());
    let c = encoding.channels();
    let enc_target = fourier_encode(&norm_tgt, encoding)?;
    let enc_target = Tensor::<f64>::from_vec(&[c, h, w], enc_target.to_chw()).cast::<f32>();
    let mut references = Vec::new();
    for (pair, norm_map) in pairs.iter().zip(normalized.iter()) {
        let enc = fourier_encode(norm_map, encoding)?;
        references.push((
            Tensor::<f64>::from_vec(&[3, h, w], pair.reference_img.to_signed_chw()).cast::<f32>(),
            Tensor::<f64>::from_vec(&[c, h, w], enc.to_chw()).cast::<f32>(),
        ));
    }
    Ok((Condition { references, enc_target }, pairs.into_iter().next().expect("one pair")))
}

/// Converts a sampled tensor back into an image.
pub fn tensor_to_image(t: &Tensor<f32>, width: usize, height: usize) -> anyhow::Result<RgbImage> {
    Ok(RgbImage::from_signed_chw(width, height, &t.cast::<f64>().to_f64_vec())?)
}
