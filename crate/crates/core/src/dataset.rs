//! Scene-pair assembly: from rendered views (or crop augmentation) to the
//! normalized, encoded tensors the trainer and sampler consume.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspond::{overlap_ratio, OVERLAP_TOL};
use crate::diffusion::TrainSample;
use crate::encode::{fourier_encode, normalize_pair, EncodingConfig, NormParams};
use crate::error::{Error, Result};
use crate::geom::{
    lidar_to_sparse_pointmap, pointmap_from_depth, relative_pose, transform_pointmap, CameraView,
    DepthMap, FrameId, Intrinsics, LidarScan, PointMap, Pose, Z_NEAR,
};
use crate::img::RgbImage;
use crate::scene::random_crop_pair;
use crate::tensor::{Scalar, Tensor};

/// Where a pair's conditioning geometry comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometrySource {
    /// Dense rendered depth.
    Dense,
    /// Sparse LiDAR splats.
    Lidar,
}

/// One rendered view with everything a pair needs.
#[derive(Clone, Debug)]
pub struct ViewRecord {
    pub index: usize,
    pub image: RgbImage,
    pub depth: DepthMap,
    pub view: CameraView,
    pub lidar: LidarScan,
}

/// One reference/target training or evaluation sample: images, point maps
/// expressed in the target frame, relative pose and overlap.
#[derive(Clone, Debug)]
pub struct ScenePair {
    pub reference_img: RgbImage,
    pub target_img: RgbImage,
    /// Reference geometry in the target frame (conditioning source).
    pub x_ref_t: PointMap,
    /// Target's own point map (conditioning source).
    pub x_tgt_t: PointMap,
    pub rel_pose: Pose,
    pub k_target: Intrinsics,
    /// Overlap measured on dense geometry regardless of `source`.
    pub overlap: f64,
    pub source: GeometrySource,
    /// (reference view index, target view index); crop pairs reuse one index.
    pub indices: (usize, usize),
}

/// Builds a pair from two view records. Overlap is always measured on the
/// dense depth; `source` chooses what conditions the model.
pub fn build_pair(
    reference: &ViewRecord,
    target: &ViewRecord,
    source: GeometrySource,
) -> Result<ScenePair> {
    let frame_r = FrameId(reference.index as u32);
    let frame_t = FrameId(target.index as u32);
    let rel = relative_pose(&reference.view.pose, &target.view.pose)?;

    let dense_r = pointmap_from_depth(&reference.view.intrinsics, &reference.depth, frame_r)?;
    let dense_r_t = transform_pointmap(&dense_r, &rel, frame_r, frame_t)?;
    let dense_t = pointmap_from_depth(&target.view.intrinsics, &target.depth, frame_t)?;
    // The overlap tolerance lives in normalized-scene units; convert it to
    // meters through the pair's own normalization scale.
    let overlap = match normalize_pair(&dense_r_t, &dense_t) {
        Ok((_, _, norm)) => overlap_ratio(
            &dense_r_t,
            &dense_t,
            &target.view.intrinsics,
            OVERLAP_TOL / norm.scale,
        )?,
        Err(Error::DegeneratePoints) => 0.0,
        Err(e) => return Err(e),
    };

    let (x_ref_t, x_tgt_t) = match source {
        GeometrySource::Dense => (dense_r_t, dense_t),
        GeometrySource::Lidar => {
            let sparse_r = lidar_to_sparse_pointmap(&reference.lidar, &reference.view, frame_r, Z_NEAR);
            let sparse_r_t = transform_pointmap(&sparse_r, &rel, frame_r, frame_t)?;
            let sparse_t = lidar_to_sparse_pointmap(&target.lidar, &target.view, frame_t, Z_NEAR);
            (sparse_r_t, sparse_t)
        }
    };
    Ok(ScenePair {
        reference_img: reference.image.clone(),
        target_img: target.image.clone(),
        x_ref_t,
        x_tgt_t,
        rel_pose: rel,
        k_target: target.view.intrinsics,
        overlap,
        source,
        indices: (reference.index, target.index),
    })
}

/// A crop-augmentation pair from a single view: identity relative pose,
/// intrinsics shifted by the crop offsets.
pub fn build_crop_pair(record: &ViewRecord, crop_w: usize, crop_h: usize, seed: u64) -> Result<ScenePair> {
    let cp = random_crop_pair(
        &record.image,
        &record.depth,
        &record.view.intrinsics,
        crop_w,
        crop_h,
        seed,
    )?;
    let frame = FrameId(record.index as u32);
    let x_ref = pointmap_from_depth(&cp.intrinsics[0], &cp.depths[0], frame)?;
    let x_tgt = pointmap_from_depth(&cp.intrinsics[1], &cp.depths[1], frame)?;
    let overlap = overlap_ratio(&x_ref, &x_tgt, &cp.intrinsics[1], OVERLAP_TOL)?;
    Ok(ScenePair {
        reference_img: cp.images[0].clone(),
        target_img: cp.images[1].clone(),
        x_ref_t: x_ref,
        x_tgt_t: x_tgt,
        rel_pose: Pose::identity(),
        k_target: cp.intrinsics[1],
        overlap,
        source: GeometrySource::Dense,
        indices: (record.index, record.index),
    })
}

/// Encoded-pair tensors plus the normalization for undoing it.
pub struct EncodedPair<T: Scalar> {
    pub sample: TrainSample<T>,
    pub norm: NormParams,
}

/// Normalizes the pair jointly, Fourier-encodes both maps, and packs the
/// images into signed channel-major tensors.
pub fn encode_pair<T: Scalar>(pair: &ScenePair, cfg: &EncodingConfig) -> Result<EncodedPair<T>> {
    let (norm_r, norm_t, norm) = normalize_pair(&pair.x_ref_t, &pair.x_tgt_t)?;
    let enc_r = fourier_encode(&norm_r, cfg)?;
    let enc_t = fourier_encode(&norm_t, cfg)?;
    let (w, h) = (pair.target_img.width(), pair.target_img.height());
    let c = cfg.channels();
    let to_tensor = |img: &RgbImage| -> Tensor<T> {
        Tensor::<f64>::from_vec(&[3, h, w], img.to_signed_chw()).cast::<T>()
    };
    Ok(EncodedPair {
        sample: TrainSample {
            target: to_tensor(&pair.target_img),
            reference: to_tensor(&pair.reference_img),
            enc_target: Tensor::<f64>::from_vec(&[c, h, w], enc_t.to_chw()).cast::<T>(),
            enc_reference: Tensor::<f64>::from_vec(&[c, h, w], enc_r.to_chw()).cast::<T>(),
        },
        norm,
    })
}

/// Renders every view of a trajectory along with its LiDAR scan.
pub fn render_views(
    scene: &crate::scene::SceneSpec,
    trajectory: &crate::scene::TrajectorySpec,
    pattern: &crate::scene::LidarPattern,
) -> Result<Vec<ViewRecord>> {
    let views = crate::scene::make_trajectory(trajectory)?;
    views
        .into_iter()
        .enumerate()
        .map(|(index, view)| {
            let out = crate::scene::render(scene, &view)?;
            let lidar = crate::scene::simulate_lidar(scene, &view, pattern)?;
            Ok(ViewRecord { index, image: out.image, depth: out.depth, view, lidar })
        })
        .collect()
}

/// Enumerates candidate view pairs within `max_gap` frames (both
/// directions), assigns the LiDAR source with probability `lidar_prob`
/// (seeded), and keeps pairs with overlap strictly above `threshold`.
pub fn enumerate_pairs(
    views: &[ViewRecord],
    max_gap: usize,
    threshold: f64,
    lidar_prob: f64,
    seed: u64,
) -> Result<Vec<ScenePair>> {
    if !(0.0..=1.0).contains(&lidar_prob) {
        return Err(Error::InvalidParameter(format!("lidar_prob {lidar_prob} outside [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for r in 0..views.len() {
        for t in 0..views.len() {
            if r == t || r.abs_diff(t) > max_gap {
                continue;
            }
            let source = if rng.gen_bool(lidar_prob) {
                GeometrySource::Lidar
            } else {
                GeometrySource::Dense
            };
            let pair = build_pair(&views[r], &views[t], source)?;
            if pair.overlap > threshold {
                pairs.push(pair);
            }
        }
    }
    Ok(pairs)
}
